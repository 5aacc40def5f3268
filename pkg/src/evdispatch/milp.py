"""Mixed-integer solving over LinearModel, and LP text-file exchange.

``solve_milp`` runs branch-and-bound on the continuous relaxation from
:mod:`evdispatch.lp_core`: most-fractional branching with lowest-index
tie-break, depth-first plunging into the nearest-rounding child, and
best-bound selection among the remaining open nodes. No cutting planes,
no primal heuristics, no presolve: on models whose relaxation has
integral vertices (the availability subproblems in isolation) the tree
collapses to the root node, and that property is part of the test
surface.

``export_lp_file``/``parse_lp_file`` implement a canonical CPLEX-LP-style
text format (UTF-8, LF, 15 significant digits) whose export -> parse ->
export round trip is byte-identical.
"""

from __future__ import annotations

import heapq
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .lp_core import (
    EQ,
    GE,
    LE,
    LinearModel,
    LpEngine,
    SolveStatus,
    compile_model,
)

__all__ = [
    "BnbConfig",
    "MilpStatus",
    "MilpSolution",
    "MilpError",
    "solve_milp",
    "export_lp_file",
    "parse_lp_file",
]


class MilpError(RuntimeError):
    """Raised when branch-and-bound cannot certify an answer."""


@dataclass(frozen=True)
class BnbConfig:
    abs_gap: float = 1e-6  # EUR
    rel_gap: float = 1e-6
    node_limit: int = 1_000_000
    int_tol: float = 1e-6

    def __post_init__(self):
        if self.abs_gap <= 0 or self.rel_gap <= 0:
            raise ValueError("gaps must be > 0")
        if self.node_limit < 1:
            raise ValueError("node_limit must be >= 1")
        if not (0 < self.int_tol < 0.5):
            raise ValueError("int_tol must lie in (0, 0.5)")


class MilpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    GAP_LIMIT = "gap_limit"
    NODE_LIMIT = "node_limit"


@dataclass(frozen=True)
class MilpSolution:
    status: MilpStatus
    x: Optional[np.ndarray]
    objective: Optional[float]  # incumbent value
    bound: float  # certified lower bound (minimization)
    gap: float  # incumbent - bound
    nodes: int  # LP relaxations solved

    @property
    def usable(self) -> bool:
        return self.x is not None and self.status in (
            MilpStatus.OPTIMAL,
            MilpStatus.GAP_LIMIT,
        )


def _prune_slack(cfg: BnbConfig, best_obj: float) -> float:
    """Bound slack below the incumbent at which nodes are discarded.

    Pruning at ``best - slack`` certifies the final incumbent to within
    the configured gaps, which is exactly what the gap parameters
    promise; with the (tight) defaults this behaves like exhaustive
    search.
    """
    if not math.isfinite(best_obj):
        return 0.0
    return min(cfg.abs_gap, cfg.rel_gap * max(1.0, abs(best_obj)))


def solve_milp(model: LinearModel, cfg: Optional[BnbConfig] = None) -> MilpSolution:
    """Branch-and-bound minimization of ``model``.

    With no integer variables this is exactly one relaxation solve. A
    returned incumbent always has its integer components exactly
    integral: the final point is re-solved with integers fixed at their
    rounded values, which also re-verifies every constraint.
    """
    cfg = cfg or BnbConfig()
    comp = compile_model(model)
    engine = LpEngine(comp)
    int_idx = comp.integer_indices

    if int_idx.size == 0:
        lp = engine.solve()
        if lp.status is SolveStatus.OPTIMAL:
            return MilpSolution(
                MilpStatus.OPTIMAL, lp.x, lp.objective, lp.objective, 0.0, 1
            )
        if lp.status is SolveStatus.INFEASIBLE:
            return MilpSolution(MilpStatus.INFEASIBLE, None, None, math.inf, math.inf, 1)
        raise MilpError(f"relaxation ended with status {lp.status}")

    best_x: Optional[np.ndarray] = None
    best_obj = math.inf
    nodes = 0
    tick = 0  # tie-break counter for deterministic heap order

    # A node is (parent LP bound, lo, hi). The plunge stack carries the
    # current dive; everything else waits in a best-bound heap.
    plunge: list[tuple[float, np.ndarray, np.ndarray]] = [
        (-math.inf, comp.lo.copy(), comp.hi.copy())
    ]
    open_heap: list[tuple[float, int, np.ndarray, np.ndarray]] = []
    status = None

    def open_bound() -> float:
        cands = [b for b, _, _ in plunge]
        if open_heap:
            cands.append(open_heap[0][0])
        return min(cands, default=math.inf)

    def gap_reached() -> bool:
        if best_x is None or (not plunge and not open_heap):
            return False  # exhausted trees terminate as OPTIMAL instead
        g = best_obj - min(open_bound(), best_obj)
        return g <= cfg.abs_gap or g <= cfg.rel_gap * max(1.0, abs(best_obj))

    while plunge or open_heap:
        if nodes >= cfg.node_limit:
            status = MilpStatus.NODE_LIMIT
            break
        slack = _prune_slack(cfg, best_obj)
        if plunge:
            pbound, lo, hi = plunge.pop()
        else:
            pbound, _, lo, hi = heapq.heappop(open_heap)
        if pbound >= best_obj - slack:
            continue

        lp = engine.solve(lo, hi)
        nodes += 1
        if lp.status is SolveStatus.INFEASIBLE:
            continue
        if lp.status is not SolveStatus.OPTIMAL:
            raise MilpError(f"node relaxation ended with status {lp.status}")
        obj = lp.objective
        if obj >= best_obj - slack:
            continue

        xi = lp.x[int_idx]
        frac = np.abs(xi - np.round(xi))
        j_rel = int(np.argmax(frac))  # ties resolve to the lowest index
        if frac[j_rel] <= cfg.int_tol:
            best_obj = obj
            best_x = lp.x.copy()
            if gap_reached():
                status = MilpStatus.GAP_LIMIT
                break
            continue

        j = int(int_idx[j_rel])
        xj = lp.x[j]
        down_hi = hi.copy()
        down_hi[j] = math.floor(xj)
        up_lo = lo.copy()
        up_lo[j] = math.ceil(xj)
        down = (obj, lo, down_hi)
        up = (obj, up_lo, hi)
        near, far = (down, up) if xj - math.floor(xj) <= 0.5 else (up, down)
        tick += 1
        heapq.heappush(open_heap, (far[0], tick, far[1], far[2]))
        plunge.append(near)

    bound = min(open_bound(), best_obj) if status is not None else best_obj
    if best_x is None:
        if status is not None:
            return MilpSolution(status, None, None, bound, math.inf, nodes)
        return MilpSolution(MilpStatus.INFEASIBLE, None, None, math.inf, math.inf, nodes)

    best_x, best_obj = _polish_incumbent(engine, int_idx, best_x, best_obj)
    if status is None:
        status = MilpStatus.OPTIMAL
        bound = best_obj
    return MilpSolution(
        status, best_x, best_obj, bound, max(0.0, best_obj - bound), nodes
    )


def _polish_incumbent(
    engine: LpEngine, int_idx: np.ndarray, x: np.ndarray, obj: float
):
    """Fix integers at their rounded values and re-solve the remaining LP.

    Guarantees exactly-integer components (never reporting 0.9999994 to
    consumers) and re-checks every constraint at the rounded point. If
    the fixed LP were numerically infeasible the original incumbent is
    kept; it is still integer-feasible to within the integrality
    tolerance.
    """
    rounded = np.round(x[int_idx])
    lo = engine.comp.lo.copy()
    hi = engine.comp.hi.copy()
    lo[int_idx] = rounded
    hi[int_idx] = rounded
    lp = engine.solve(lo, hi)
    if lp.status is SolveStatus.OPTIMAL:
        fixed = lp.x.copy()
        fixed[int_idx] = rounded
        return fixed, lp.objective
    return x, obj


# ---------------------------------------------------------------------------
# Canonical LP text format
# ---------------------------------------------------------------------------

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _fmt(value: float) -> str:
    return "%.15g" % value


def _emit_terms(terms: list, first_prefix: str = "") -> list:
    """Render [(coef, name)] as canonical signed tokens."""
    out = []
    for k, (coef, name) in enumerate(terms):
        sign = "-" if coef < 0 else "+"
        mag = _fmt(abs(coef))
        if k == 0 and first_prefix == "":
            lead = f"- {mag}" if coef < 0 else mag
        else:
            lead = f"{sign} {mag}"
        out.append(f"{lead} {name}" if name else lead)
    return out


def _wrap(prefix: str, tokens: list, width: int = 240) -> list:
    """Fold tokens into lines of bounded width, deterministic layout."""
    lines = [prefix]
    for tok in tokens:
        if len(lines[-1]) + 1 + len(tok) > width and lines[-1] != " ":
            lines.append(" ")
        lines[-1] = (lines[-1] + " " + tok) if lines[-1] != " " else " " + tok
    return lines


def export_lp_file(model: LinearModel, path) -> None:
    """Write ``model`` in the canonical LP text format.

    Sections ``Minimize``, ``Subject To``, ``Bounds``, ``Binaries`` and
    ``End`` are always present. All names must already match
    ``[A-Za-z_][A-Za-z0-9_]*``; clashes between row names are rejected.
    Coefficients carry 15 significant digits, encoding is UTF-8 with LF
    line endings.
    """
    for name in model.var_names:
        if not _NAME_RE.match(name):
            raise ValueError(f"variable name {name!r} not LP-file safe")
    seen = set(model.var_names)
    for name in model.row_names:
        if not _NAME_RE.match(name):
            raise ValueError(f"row name {name!r} not LP-file safe")
        if name in seen:
            raise ValueError(f"name collision on {name!r}")
        seen.add(name)

    lines = ["Minimize"]
    obj_terms = [
        (model.obj[j], model.var_names[j])
        for j in sorted(model.obj)
        if model.obj[j] != 0.0
    ]
    if model.obj_const != 0.0 or not obj_terms:
        obj_terms.append((model.obj_const, ""))
    lines += _wrap(" obj:", _emit_terms(obj_terms))

    lines.append("Subject To")
    for i in range(model.n_rows):
        idx, coef = model.row_terms[i]
        terms = [
            (float(a), model.var_names[int(j)])
            for j, a in zip(idx, coef)
            if a != 0.0
        ]
        if not terms:
            raise ValueError(f"row {model.row_names[i]!r} has no nonzero terms")
        tokens = _emit_terms(terms)
        tokens += [model.senses[i], _fmt(model.rhs[i])]
        lines += _wrap(f" {model.row_names[i]}:", tokens)

    lines.append("Bounds")
    for j, name in enumerate(model.var_names):
        lo, hi = model.lo[j], model.hi[j]
        if lo == hi:
            lines.append(f" {name} = {_fmt(lo)}")
        elif math.isinf(lo) and math.isinf(hi):
            lines.append(f" {name} free")
        elif math.isinf(hi):
            lines.append(f" {name} >= {_fmt(lo)}")
        elif math.isinf(lo):
            lines.append(f" -infinity <= {name} <= {_fmt(hi)}")
        else:
            lines.append(f" {_fmt(lo)} <= {name} <= {_fmt(hi)}")

    lines.append("Binaries")
    for j in model.integer_indices():
        if model.lo[j] < 0 or model.hi[j] > 1:
            raise ValueError(
                f"integer variable {model.var_names[j]!r} is not binary; "
                "only binary integrality is representable in this format"
            )
        lines.append(f" {model.var_names[j]}")
    lines.append("End")

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


class LpParseError(ValueError):
    pass


def parse_lp_file(path) -> LinearModel:
    """Companion reader for :func:`export_lp_file` (canonical files only)."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    sections: dict[str, list] = {}
    current = None
    for line in raw.split("\n"):
        stripped = line.strip()
        if stripped in ("Minimize", "Subject To", "Bounds", "Binaries", "End"):
            current = stripped
            sections[current] = []
            continue
        if stripped == "":
            continue
        if current is None:
            raise LpParseError(f"content before first section: {line!r}")
        sections[current].append(line)
    for required in ("Minimize", "Subject To", "Bounds", "Binaries", "End"):
        if required not in sections:
            raise LpParseError(f"missing section {required!r}")

    model = LinearModel()

    def vidx(name: str, where: str) -> int:
        try:
            return model.var_index(name)
        except KeyError as exc:
            raise LpParseError(f"{where}: unknown variable {name!r}") from exc

    # Bounds lines enumerate every variable in declaration order, so
    # they are parsed first to rebuild the registry.
    for line in sections["Bounds"]:
        toks = line.split()
        if len(toks) == 2 and toks[1] == "free":
            model.add_var(toks[0], -math.inf, math.inf)
        elif len(toks) == 3 and toks[1] == "=":
            v = float(toks[2])
            model.add_var(toks[0], v, v)
        elif len(toks) == 3 and toks[1] == ">=":
            model.add_var(toks[0], float(toks[2]), math.inf)
        elif len(toks) == 5 and toks[0] == "-infinity" and toks[1] == "<=" and toks[3] == "<=":
            model.add_var(toks[2], -math.inf, float(toks[4]))
        elif len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
            model.add_var(toks[2], float(toks[0]), float(toks[4]))
        else:
            raise LpParseError(f"unrecognized bounds line: {line!r}")

    def parse_terms(tokens: list, where: str):
        """Signed (coef, name-or-None) pairs; bare numbers are constants."""
        terms = []
        i = 0
        while i < len(tokens):
            sign = 1.0
            if tokens[i] in ("+", "-"):
                sign = -1.0 if tokens[i] == "-" else 1.0
                i += 1
            try:
                coef = sign * float(tokens[i])
            except ValueError as exc:
                raise LpParseError(f"{where}: expected number at {tokens[i]!r}") from exc
            i += 1
            name = None
            if i < len(tokens) and _NAME_RE.match(tokens[i]):
                name = tokens[i]
                i += 1
            terms.append((coef, name))
        return terms

    obj_tokens = " ".join(sections["Minimize"]).split()
    if not obj_tokens or not obj_tokens[0].startswith("obj:"):
        raise LpParseError("objective must start with 'obj:'")
    obj_tokens = obj_tokens[1:]
    for coef, name in parse_terms(obj_tokens, "objective"):
        if name is None:
            model.obj_const += coef
        else:
            model.add_objective_term(vidx(name, "objective"), coef)

    body = " ".join(sections["Subject To"]).split()
    i = 0
    while i < len(body):
        label = body[i]
        if not label.endswith(":"):
            raise LpParseError(f"expected row label, got {label!r}")
        row_name = label[:-1]
        i += 1
        j = i
        while j < len(body) and body[j] not in (LE, EQ, GE):
            j += 1
        if j >= len(body) or j + 1 >= len(body):
            raise LpParseError(f"row {row_name!r}: missing sense or rhs")
        terms = parse_terms(body[i:j], f"row {row_name}")
        sense = body[j]
        rhs = float(body[j + 1])
        i = j + 2
        pairs = []
        for coef, name in terms:
            if name is None:
                raise LpParseError(f"row {row_name!r}: constant on left-hand side")
            pairs.append((vidx(name, f"row {row_name}"), coef))
        model.add_row(pairs, sense, rhs, name=row_name)

    for line in sections["Binaries"]:
        name = line.strip()
        model.is_integer[vidx(name, "binaries")] = True

    return model
