"""Linear-program representation and a certified continuous solver.

``LinearModel`` is the lingua franca between the model builders and the
solvers: named variables with bounds and integrality flags, linear rows
with a sense and right-hand side, and a minimization objective.

``solve_lp`` relaxes integrality and solves with a deterministic dual
simplex (HiGHS), returning primal values, one dual per row and reduced
costs. :class:`LpEngine` keeps a built solver instance alive so that
repeated solves of the same rows under changing variable bounds (the
branch-and-bound pattern) reuse the factorized basis. Every optimal
solve can be certified by :func:`check_duality`, which recomputes
primal/dual/complementarity residuals and the primal-dual objective gap
from the model data alone.

Dual sign convention: the dual of a row is the sensitivity of the
optimal objective to that row's right-hand side, so duals of ``>=``
rows are non-negative and duals of ``<=`` rows are non-positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp

try:  # scipy >= 1.15 vendors the HiGHS bindings; reuse them directly
    from scipy.optimize._highspy import _core as _highs_core
except ImportError:  # pragma: no cover - exercised only on older scipy
    _highs_core = None

__all__ = [
    "LE",
    "EQ",
    "GE",
    "LinearModel",
    "SolveStatus",
    "LpSolution",
    "DualityReport",
    "CompiledLp",
    "LpEngine",
    "compile_model",
    "solve_lp",
    "solve_compiled",
    "check_duality",
    "PRIMAL_FEAS_TOL",
    "DUAL_FEAS_TOL",
    "COMP_SLACK_TOL",
    "OBJ_GAP_REL_TOL",
]

LE, EQ, GE = "<=", "=", ">="
_SENSES = (LE, EQ, GE)

# Certification tolerances. Fixed, not per-solve configurable: moving
# targets would let test expectations drift.
PRIMAL_FEAS_TOL = 1e-7
DUAL_FEAS_TOL = 1e-7
COMP_SLACK_TOL = 1e-6
OBJ_GAP_REL_TOL = 1e-6

#: Solver feasibility tolerances, well inside the certification bounds
#: but loose enough not to stall on degenerate warm starts.
_SOLVE_TOL = 1e-9


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    FAILED = "failed"  # numerical failure, reported explicitly


class LinearModel:
    """Mutable builder for an LP/MILP in named-variable form."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.var_names: list[str] = []
        self._var_index: dict[str, int] = {}
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.is_integer: list[bool] = []
        self.row_names: list[str] = []
        self.row_terms: list[tuple[np.ndarray, np.ndarray]] = []
        self.senses: list[str] = []
        self.rhs: list[float] = []
        self.obj: dict[int, float] = {}
        self.obj_const: float = 0.0

    # -- construction -------------------------------------------------

    def add_var(
        self,
        name: str,
        lo: float = 0.0,
        hi: float = math.inf,
        integer: bool = False,
    ) -> int:
        if name in self._var_index:
            raise ValueError(f"duplicate variable name {name!r}")
        if not (lo <= hi):
            raise ValueError(f"variable {name!r}: bounds lo={lo} > hi={hi}")
        idx = len(self.var_names)
        self.var_names.append(name)
        self._var_index[name] = idx
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.is_integer.append(bool(integer))
        return idx

    def var_index(self, name: str) -> int:
        return self._var_index[name]

    def add_row(
        self,
        terms: Iterable[tuple[int, float]],
        sense: str,
        rhs: float,
        name: str = "",
    ) -> int:
        """Append one constraint row. Duplicate column entries accumulate."""
        if sense not in _SENSES:
            raise ValueError(f"unknown sense {sense!r}")
        acc: dict[int, float] = {}
        for j, a in terms:
            if not (0 <= j < len(self.var_names)):
                raise ValueError(f"row {name!r} references unknown column {j}")
            acc[j] = acc.get(j, 0.0) + float(a)
        idx = np.fromiter(acc.keys(), dtype=np.int64, count=len(acc))
        coef = np.fromiter(acc.values(), dtype=float, count=len(acc))
        if idx.size and not np.all(np.isfinite(coef)):
            raise ValueError(f"row {name!r} has non-finite coefficients")
        if not math.isfinite(rhs):
            raise ValueError(f"row {name!r} has non-finite rhs")
        row = len(self.row_names)
        self.row_names.append(name or f"r{row}")
        self.row_terms.append((idx, coef))
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        return row

    def add_objective_term(self, j: int, coef: float) -> None:
        self.obj[j] = self.obj.get(j, 0.0) + float(coef)

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_rows(self) -> int:
        return len(self.row_names)

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for j, a in self.obj.items():
            c[j] = a
        return c

    def row_matrix(self) -> sp.csr_matrix:
        """All rows as one sparse matrix in declaration order."""
        n_nz = sum(idx.size for idx, _ in self.row_terms)
        indptr = np.zeros(self.n_rows + 1, dtype=np.int64)
        indices = np.empty(n_nz, dtype=np.int64)
        data = np.empty(n_nz)
        pos = 0
        for i, (idx, coef) in enumerate(self.row_terms):
            indices[pos : pos + idx.size] = idx
            data[pos : pos + idx.size] = coef
            pos += idx.size
            indptr[i + 1] = pos
        return sp.csr_matrix(
            (data, indices, indptr), shape=(self.n_rows, self.n_vars)
        )

    def integer_indices(self) -> np.ndarray:
        return np.nonzero(self.is_integer)[0]


@dataclass(frozen=True)
class LpSolution:
    status: SolveStatus
    x: Optional[np.ndarray]
    duals: Optional[np.ndarray]  # one per row, d(objective)/d(rhs)
    reduced_costs: Optional[np.ndarray]
    objective: Optional[float]


@dataclass(frozen=True)
class DualityReport:
    """Worst-case certification residuals of an optimal LP solution."""

    primal_residual: float  # max row/bound violation
    dual_residual: float  # max dual sign / reduced-cost sign violation
    comp_residual: float  # max complementary-slackness product
    obj_gap_rel: float  # |primal - dual objective| / max(1, |primal|)

    @property
    def ok(self) -> bool:
        return (
            self.primal_residual <= PRIMAL_FEAS_TOL
            and self.dual_residual <= DUAL_FEAS_TOL
            and self.comp_residual <= COMP_SLACK_TOL
            and self.obj_gap_rel <= OBJ_GAP_REL_TOL
        )


@dataclass
class CompiledLp:
    """Solver-ready arrays for one model; bounds may vary per solve."""

    c: np.ndarray
    obj_const: float
    lo: np.ndarray
    hi: np.ndarray
    a: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    senses: np.ndarray
    rhs: np.ndarray
    integer_indices: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.rhs.size


def compile_model(model: LinearModel) -> CompiledLp:
    senses = np.array(model.senses)
    rhs = np.asarray(model.rhs, dtype=float)
    row_lo = np.where(senses == LE, -np.inf, rhs)
    row_hi = np.where(senses == GE, np.inf, rhs)
    return CompiledLp(
        c=model.objective_vector(),
        obj_const=model.obj_const,
        lo=np.asarray(model.lo, dtype=float),
        hi=np.asarray(model.hi, dtype=float),
        a=model.row_matrix(),
        row_lo=row_lo,
        row_hi=row_hi,
        senses=senses,
        rhs=rhs,
        integer_indices=model.integer_indices(),
    )


class LpEngine:
    """One solver instance bound to one compiled model.

    Re-solving after a bounds change hot-starts from the previous
    basis, which is what makes branch-and-bound nodes cheap. Results
    are deterministic: a fixed solve sequence on identical inputs
    reproduces identical outputs.
    """

    def __init__(self, comp: CompiledLp):
        self.comp = comp
        self._h = None
        self._bounds_dirty = False
        if _highs_core is not None:
            self._h = _highs_core._Highs()
            self._h.setOptionValue("output_flag", False)
            self._h.setOptionValue("threads", 1)
            self._h.setOptionValue("primal_feasibility_tolerance", _SOLVE_TOL)
            self._h.setOptionValue("dual_feasibility_tolerance", _SOLVE_TOL)
            a = comp.a.tocsr()
            n = comp.c.size
            self._h.addCols(
                n,
                comp.c,
                comp.lo,
                comp.hi,
                0,
                np.empty(0, dtype=np.int32),
                np.empty(0, dtype=np.int32),
                np.empty(0),
            )
            self._h.addRows(
                comp.n_rows,
                comp.row_lo,
                comp.row_hi,
                a.nnz,
                a.indptr[:-1].astype(np.int32),
                a.indices.astype(np.int32),
                a.data,
            )
            self._all_cols = np.arange(n, dtype=np.int32)

    def solve(
        self, lo: Optional[np.ndarray] = None, hi: Optional[np.ndarray] = None
    ) -> LpSolution:
        """Solve the relaxation, optionally overriding variable bounds."""
        if self._h is not None:
            return self._solve_direct(lo, hi)
        return self._solve_scipy(lo, hi)

    # -- direct HiGHS path ---------------------------------------------

    def _solve_direct(self, lo, hi) -> LpSolution:
        comp = self.comp
        if lo is not None or hi is not None or self._bounds_dirty:
            self._h.changeColsBounds(
                self._all_cols.size,
                self._all_cols,
                comp.lo if lo is None else lo,
                comp.hi if hi is None else hi,
            )
            self._bounds_dirty = lo is not None or hi is not None
        self._h.run()
        status = self._h.getModelStatus()
        conclusive = (
            _highs_core.HighsModelStatus.kOptimal,
            _highs_core.HighsModelStatus.kInfeasible,
            _highs_core.HighsModelStatus.kUnbounded,
            _highs_core.HighsModelStatus.kUnboundedOrInfeasible,
        )
        if status not in conclusive:
            # A stalled warm start on a degenerate basis; retry cold.
            self._h.clearSolver()
            self._h.run()
            status = self._h.getModelStatus()
        if status == _highs_core.HighsModelStatus.kInfeasible:
            return LpSolution(SolveStatus.INFEASIBLE, None, None, None, None)
        if status in (
            _highs_core.HighsModelStatus.kUnbounded,
            _highs_core.HighsModelStatus.kUnboundedOrInfeasible,
        ):
            return LpSolution(SolveStatus.UNBOUNDED, None, None, None, None)
        if status != _highs_core.HighsModelStatus.kOptimal:
            return LpSolution(SolveStatus.FAILED, None, None, None, None)
        sol = self._h.getSolution()
        x = np.asarray(sol.col_value, dtype=float)
        duals = np.asarray(sol.row_dual, dtype=float)
        reduced = comp.c - comp.a.T @ duals
        return LpSolution(
            status=SolveStatus.OPTIMAL,
            x=x,
            duals=duals,
            reduced_costs=reduced,
            objective=float(self._h.getObjectiveValue()) + comp.obj_const,
        )

    # -- scipy fallback (older scipy without vendored bindings) ---------

    def _solve_scipy(self, lo, hi) -> LpSolution:
        from scipy.optimize import linprog

        comp = self.comp
        lo = comp.lo if lo is None else lo
        hi = comp.hi if hi is None else hi
        eq = comp.senses == EQ
        ub = ~eq
        sign = np.where(comp.senses[ub] == GE, -1.0, 1.0)
        a_ub = b_ub = a_eq = b_eq = None
        ub_rows = np.nonzero(ub)[0]
        eq_rows = np.nonzero(eq)[0]
        if ub_rows.size:
            a_ub = sp.diags(sign) @ comp.a[ub_rows]
            b_ub = sign * comp.rhs[ub_rows]
        if eq_rows.size:
            a_eq = comp.a[eq_rows]
            b_eq = comp.rhs[eq_rows]
        res = linprog(
            comp.c,
            A_ub=a_ub,
            b_ub=b_ub,
            A_eq=a_eq,
            b_eq=b_eq,
            bounds=np.column_stack([lo, hi]),
            method="highs-ds",
            options={
                "presolve": True,
                "primal_feasibility_tolerance": _SOLVE_TOL,
                "dual_feasibility_tolerance": _SOLVE_TOL,
            },
        )
        status = {
            0: SolveStatus.OPTIMAL,
            2: SolveStatus.INFEASIBLE,
            3: SolveStatus.UNBOUNDED,
        }.get(res.status, SolveStatus.FAILED)
        if status is not SolveStatus.OPTIMAL:
            return LpSolution(status, None, None, None, None)
        duals = np.zeros(comp.n_rows)
        if ub_rows.size:
            duals[ub_rows] = np.asarray(res.ineqlin.marginals) * sign
        if eq_rows.size:
            duals[eq_rows] = np.asarray(res.eqlin.marginals)
        x = np.asarray(res.x, dtype=float)
        return LpSolution(
            status=SolveStatus.OPTIMAL,
            x=x,
            duals=duals,
            reduced_costs=comp.c - comp.a.T @ duals,
            objective=float(res.fun) + comp.obj_const,
        )


def solve_compiled(
    comp: CompiledLp,
    lo: Optional[np.ndarray] = None,
    hi: Optional[np.ndarray] = None,
) -> LpSolution:
    """One-shot solve of a compiled model (fresh engine)."""
    return LpEngine(comp).solve(lo, hi)


def solve_lp(model: LinearModel) -> LpSolution:
    """Solve the continuous relaxation of ``model``.

    Deterministic: identical models produce identical solutions (single
    fixed algorithm, no randomization, serial execution).
    """
    return solve_compiled(compile_model(model))


def check_duality(model: LinearModel, solution: LpSolution) -> DualityReport:
    """Recompute certification residuals for an optimal solution.

    Independent of the solver: uses only the model data and the
    returned primal values and duals. Refuses non-optimal solutions.
    """
    if solution.status is not SolveStatus.OPTIMAL:
        raise ValueError(f"cannot certify a solution with status {solution.status}")
    x = solution.x
    y = solution.duals
    a = model.row_matrix()
    rhs = np.asarray(model.rhs, dtype=float)
    senses = np.array(model.senses)
    lo = np.asarray(model.lo, dtype=float)
    hi = np.asarray(model.hi, dtype=float)
    c = model.objective_vector()

    ax = a @ x if model.n_rows else np.zeros(0)
    slack = rhs - ax  # >= 0 for "<=" rows, <= 0 for ">=" rows at feasibility

    primal = 0.0
    if model.n_rows:
        le = senses == LE
        ge = senses == GE
        eq = senses == EQ
        primal = max(
            primal,
            float(np.max(-slack[le], initial=0.0)),
            float(np.max(slack[ge], initial=0.0)),
            float(np.max(np.abs(slack[eq]), initial=0.0)),
        )
    primal = max(
        primal,
        float(np.max(lo - x, initial=0.0)),
        float(np.max(x - hi, initial=0.0)),
    )

    # Dual sign feasibility: "<=" rows need y <= 0, ">=" rows y >= 0.
    dual = 0.0
    if model.n_rows:
        dual = max(
            dual,
            float(np.max(y[senses == LE], initial=0.0)),
            float(np.max(-y[senses == GE], initial=0.0)),
        )
    r = c - (a.T @ y if model.n_rows else 0.0)
    no_lo = np.isneginf(lo)
    no_hi = np.isposinf(hi)
    dual = max(
        dual,
        float(np.max(r[no_lo], initial=0.0)),
        float(np.max(-r[no_hi], initial=0.0)),
    )

    comp_res = 0.0
    if model.n_rows:
        ineq = senses != EQ
        comp_res = float(np.max(np.abs(y[ineq] * slack[ineq]), initial=0.0))
    pos = (r > 0) & ~no_lo
    neg = (r < 0) & ~no_hi
    comp_res = max(
        comp_res,
        float(np.max(np.abs(r[pos] * (x[pos] - lo[pos])), initial=0.0)),
        float(np.max(np.abs(r[neg] * (hi[neg] - x[neg])), initial=0.0)),
    )

    bound_term = float(np.sum(r[pos] * lo[pos]) + np.sum(r[neg] * hi[neg]))
    dual_obj = float(y @ rhs) + bound_term + model.obj_const
    primal_obj = float(c @ x) + model.obj_const
    gap = abs(primal_obj - dual_obj) / max(1.0, abs(primal_obj))

    return DualityReport(
        primal_residual=primal,
        dual_residual=dual,
        comp_residual=comp_res,
        obj_gap_rel=gap,
    )
