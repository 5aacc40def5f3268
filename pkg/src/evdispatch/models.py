"""Builders that turn fleet data into LinearModel instances, and decoders.

Four formulations share the same physical core (power balance, feeder
limits, battery dynamics with slack, terminal state-of-charge, cycle
degradation):

* ``build_deterministic`` -- expected availability (fractional) and
  expected driving consumption enter as parameters; pure LP.
* ``build_stochastic`` -- one first-stage market position, per-scenario
  recourse copies of the EV schedules; pure LP.
* ``build_robust_milp`` -- availability and driving-energy placement
  become decision variables constrained to be worst-case optimal for
  the two adversarial availability subproblems, imposed through their
  LP duals (an epigraph certificate for battery draining; primal plus
  dual feasibility plus strong duality for market interaction). The
  products of binary availability with charging/discharging are
  linearized exactly with gated copies ``zc``/``zd``.
* ``build_feasibility`` -- ex-post LP measuring how a committed market
  position survives a realized day: battery slack plus shortfall on
  committed sales, degradation omitted.

Every row carries exactly one block tag; decoders verify the solution
invariants and, for robust solutions, re-check the worst-case
subproblems against the independent greedy oracles before returning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .domain import (
    AggregatorParams,
    DispatchSolution,
    FleetSpec,
    Horizon,
    ModelKind,
    PriceSeries,
    UncertaintySet,
    validate_fleet,
)
from .estimation import ScenarioSet
from .lp_core import EQ, GE, LE, LinearModel, LpSolution, SolveStatus
from .milp import MilpSolution, MilpStatus
from .oracles import (
    LowerLevelInstance,
    draining_weights,
    interaction_weights,
    solve_lower_A,
    solve_lower_B,
)

__all__ = [
    "ModelBuildError",
    "DecodeError",
    "ModelArtifacts",
    "FeasibilityOutcome",
    "build_deterministic",
    "build_stochastic",
    "build_robust_milp",
    "build_feasibility",
    "decode",
    "decode_feasibility",
    "audit_robust_solution",
]

#: Tolerance for decoded-solution invariants (kW / kWh / EUR).
DECODE_TOL = 1e-6


class ModelBuildError(ValueError):
    """Input data cannot produce a well-posed model; message lists why."""


class DecodeError(RuntimeError):
    """A solver answer violates a model invariant; message names the block."""


@dataclass
class ModelArtifacts:
    """A built model plus the maps needed to interpret its solution."""

    model: LinearModel
    kind: str  # "deterministic" | "stochastic" | "robust" | "feasibility"
    horizon: Horizon
    fleet: FleetSpec
    params: AggregatorParams
    cols: dict  # (role, *indices) -> column
    row_blocks: dict  # tag -> list of row indices
    prices: Optional[PriceSeries] = None
    alpha_hat: Optional[np.ndarray] = None  # deterministic
    tau_hat: Optional[np.ndarray] = None
    scenarios: Optional[ScenarioSet] = None  # stochastic
    uset: Optional[UncertaintySet] = None  # robust
    xi_hat: Optional[np.ndarray] = None
    p_committed: Optional[np.ndarray] = None  # feasibility
    realized_avail: Optional[np.ndarray] = None
    realized_cons: Optional[np.ndarray] = None

    def col_array(self, x: np.ndarray, role: str, *shape_idx) -> np.ndarray:
        """Gather solution values for one role into a dense array."""
        out = np.empty(tuple(len(r) for r in shape_idx))
        for pos in np.ndindex(out.shape):
            key = (role, *(r[i] for r, i in zip(shape_idx, pos)))
            out[pos] = x[self.cols[key]]
        return out


@dataclass(frozen=True)
class FeasibilityOutcome:
    """Decoded ex-post feasibility solve for one committed position."""

    objective: float  # EUR
    c: np.ndarray
    d: np.ndarray
    e: np.ndarray
    s: np.ndarray
    p_minus: np.ndarray  # (n_periods,), kW; zero at hours without a sale
    slack_kwh: float  # total battery-balance violation
    unsold_kwh: float  # total shortfall on committed sales


class _Builder:
    """Shared bookkeeping: tagged rows and role-indexed columns."""

    def __init__(self, name: str):
        self.m = LinearModel(name)
        self.cols: dict = {}
        self.blocks: dict = {}

    def var(self, key, name, lo=0.0, hi=math.inf, integer=False) -> int:
        j = self.m.add_var(name, lo, hi, integer)
        self.cols[key] = j
        return j

    def row(self, tag, terms, sense, rhs, name) -> int:
        i = self.m.add_row(terms, sense, rhs, name=name)
        self.blocks.setdefault(tag, []).append(i)
        return i

    def finish(self) -> tuple:
        # Every row belongs to exactly one block and every variable is
        # referenced somewhere; both guard against silent builder drift.
        tagged = sum(len(v) for v in self.blocks.values())
        assert tagged == self.m.n_rows, "untagged rows present"
        used = set(self.m.obj)
        for idx, _ in self.m.row_terms:
            used.update(int(j) for j in idx)
        assert len(used) == self.m.n_vars, "unreferenced variables present"
        return self.m, self.cols, self.blocks


def _require_admissible(fleet: FleetSpec, horizon: Horizon) -> None:
    diags = validate_fleet(fleet, horizon)
    if diags:
        raise ModelBuildError("; ".join(diags))


def _check_horizon(prices: PriceSeries, horizon: Optional[Horizon]) -> Horizon:
    horizon = horizon or Horizon(n_periods=prices.n_periods)
    if horizon.n_periods != prices.n_periods:
        raise ModelBuildError(
            f"price series has {prices.n_periods} periods, "
            f"horizon expects {horizon.n_periods}"
        )
    return horizon


def _feeder_rows(b: _Builder, n_t: int, cap: float) -> None:
    for t in range(n_t):
        b.row("feeder_hi", [(b.cols["p", t], 1.0)], LE, cap, f"feeder_hi_{t}")
        b.row("feeder_lo", [(b.cols["p", t], 1.0)], GE, -cap, f"feeder_lo_{t}")


def build_deterministic(
    fleet: FleetSpec,
    prices: PriceSeries,
    alpha_hat,
    tau_hat,
    params: AggregatorParams,
    horizon: Optional[Horizon] = None,
) -> ModelArtifacts:
    """Expected-value dispatch LP.

    ``alpha_hat`` may be fractional (an expectation); it scales the
    charging term in the battery dynamics and caps the discharging
    power. ``tau_hat`` is registered as fixed-bound variables so every
    formulation exposes the same per-period transport-energy columns
    (6 columns per EV-period plus the market position).
    """
    horizon = _check_horizon(prices, horizon)
    _require_admissible(fleet, horizon)
    n_t, h = horizon.n_periods, horizon.period_hours
    n_v = len(fleet)
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    tau_hat = np.asarray(tau_hat, dtype=float)
    if alpha_hat.shape != (n_v, n_t) or tau_hat.shape != (n_v, n_t):
        raise ModelBuildError("alpha_hat/tau_hat must have shape (n_evs, n_periods)")
    if np.any((alpha_hat < 0) | (alpha_hat > 1)):
        raise ModelBuildError("expected availability must lie in [0, 1]")
    if np.any(tau_hat < 0):
        raise ModelBuildError("expected consumption must be >= 0")

    b = _Builder("deterministic_dispatch")
    lam = prices.eur_per_kwh
    for t in range(n_t):
        j = b.var(("p", t), f"p_{t}", -math.inf, math.inf)
        b.m.add_objective_term(j, float(lam[t]) * h)
    for v, ev in enumerate(fleet):
        for t in range(n_t):
            b.var(("c", v, t), f"c_{v}_{t}", 0.0, ev.c_max)
            b.var(("d", v, t), f"d_{v}_{t}", 0.0, ev.d_max * float(alpha_hat[v, t]))
            b.var(("e", v, t), f"e_{v}_{t}", ev.e_min, ev.e_max)
            b.var(("s", v, t), f"s_{v}_{t}")
            b.var(("cdeg", v, t), f"cdeg_{v}_{t}")
            b.var(("tau", v, t), f"tau_{v}_{t}", float(tau_hat[v, t]), float(tau_hat[v, t]))
            b.m.add_objective_term(b.cols["cdeg", v, t], 1.0)
            b.m.add_objective_term(b.cols["s", v, t], params.pen_balance)

    for t in range(n_t):
        terms = [(b.cols["p", t], 1.0)]
        for v in range(n_v):
            terms += [(b.cols["c", v, t], -1.0), (b.cols["d", v, t], 1.0)]
        b.row("balance", terms, EQ, 0.0, f"balance_{t}")
    _feeder_rows(b, n_t, params.feeder_cap)

    for v, ev in enumerate(fleet):
        for t in range(n_t):
            terms = [
                (b.cols["e", v, t], 1.0),
                (b.cols["c", v, t], -ev.eta * h * float(alpha_hat[v, t])),
                (b.cols["d", v, t], h / ev.eta),
                (b.cols["tau", v, t], 1.0),
                (b.cols["s", v, t], -1.0),
            ]
            rhs = ev.e_init if t == 0 else 0.0
            if t > 0:
                terms.append((b.cols["e", v, t - 1], -1.0))
            b.row("dynamics", terms, EQ, rhs, f"dynamics_{v}_{t}")
            b.row(
                "degradation",
                [
                    (b.cols["cdeg", v, t], 1.0),
                    (b.cols["d", v, t], -ev.deg_coef * h / ev.eta),
                    (b.cols["tau", v, t], -ev.deg_coef),
                ],
                EQ,
                0.0,
                f"degradation_{v}_{t}",
            )
        b.row("terminal", [(b.cols["e", v, n_t - 1], 1.0)], EQ, ev.e_init, f"terminal_{v}")

    model, cols, blocks = b.finish()
    assert model.n_vars == 6 * n_v * n_t + n_t  # documented size formula
    return ModelArtifacts(
        model=model,
        kind=ModelKind.DETERMINISTIC.value,
        horizon=horizon,
        fleet=fleet,
        params=params,
        cols=cols,
        row_blocks=blocks,
        prices=prices,
        alpha_hat=alpha_hat,
        tau_hat=tau_hat,
    )


def build_stochastic(
    fleet: FleetSpec,
    prices: PriceSeries,
    scenarios: ScenarioSet,
    params: AggregatorParams,
    horizon: Optional[Horizon] = None,
) -> ModelArtifacts:
    """Two-stage dispatch LP: shared market position, per-scenario recourse.

    The coupling row per period and scenario lets the fleet consume at
    most the purchased power and obliges it to deliver at least the
    sold power; all EV physics are replicated per scenario with that
    scenario's realized availability and consumption.
    """
    horizon = _check_horizon(prices, horizon)
    _require_admissible(fleet, horizon)
    n_t, h = horizon.n_periods, horizon.period_hours
    n_v = len(fleet)
    if scenarios.avail.shape[1:] != (n_v, n_t):
        raise ModelBuildError(
            f"scenario block shaped {scenarios.avail.shape[1:]}, "
            f"expected {(n_v, n_t)}"
        )
    n_w = scenarios.n_scenarios
    pi = scenarios.pi

    b = _Builder("stochastic_dispatch")
    lam = prices.eur_per_kwh
    for t in range(n_t):
        j = b.var(("p", t), f"p_{t}", -math.inf, math.inf)
        b.m.add_objective_term(j, float(lam[t]) * h)
    for w in range(n_w):
        for v, ev in enumerate(fleet):
            for t in range(n_t):
                avail = float(scenarios.avail[w, v, t])
                tau = float(scenarios.cons[w, v, t])
                b.var(("c", w, v, t), f"c_{w}_{v}_{t}", 0.0, ev.c_max)
                b.var(("d", w, v, t), f"d_{w}_{v}_{t}", 0.0, ev.d_max * avail)
                b.var(("e", w, v, t), f"e_{w}_{v}_{t}", ev.e_min, ev.e_max)
                b.var(("s", w, v, t), f"s_{w}_{v}_{t}")
                b.var(("cdeg", w, v, t), f"cdeg_{w}_{v}_{t}")
                b.var(("tau", w, v, t), f"tau_{w}_{v}_{t}", tau, tau)
                b.m.add_objective_term(b.cols["cdeg", w, v, t], float(pi[w]))
                b.m.add_objective_term(
                    b.cols["s", w, v, t], float(pi[w]) * params.pen_balance
                )

    _feeder_rows(b, n_t, params.feeder_cap)
    for w in range(n_w):
        for t in range(n_t):
            terms = [(b.cols["p", t], -1.0)]
            for v in range(n_v):
                terms += [(b.cols["c", w, v, t], 1.0), (b.cols["d", w, v, t], -1.0)]
            b.row("balance", terms, LE, 0.0, f"balance_{w}_{t}")
        for v, ev in enumerate(fleet):
            for t in range(n_t):
                avail = float(scenarios.avail[w, v, t])
                terms = [
                    (b.cols["e", w, v, t], 1.0),
                    (b.cols["c", w, v, t], -ev.eta * h * avail),
                    (b.cols["d", w, v, t], h / ev.eta),
                    (b.cols["tau", w, v, t], 1.0),
                    (b.cols["s", w, v, t], -1.0),
                ]
                rhs = ev.e_init if t == 0 else 0.0
                if t > 0:
                    terms.append((b.cols["e", w, v, t - 1], -1.0))
                b.row("dynamics", terms, EQ, rhs, f"dynamics_{w}_{v}_{t}")
                b.row(
                    "degradation",
                    [
                        (b.cols["cdeg", w, v, t], 1.0),
                        (b.cols["d", w, v, t], -ev.deg_coef * h / ev.eta),
                        (b.cols["tau", w, v, t], -ev.deg_coef),
                    ],
                    EQ,
                    0.0,
                    f"degradation_{w}_{v}_{t}",
                )
            b.row(
                "terminal",
                [(b.cols["e", w, v, n_t - 1], 1.0)],
                EQ,
                ev.e_init,
                f"terminal_{w}_{v}",
            )

    model, cols, blocks = b.finish()
    assert model.n_vars == n_t + 6 * n_v * n_t * n_w
    return ModelArtifacts(
        model=model,
        kind=ModelKind.STOCHASTIC.value,
        horizon=horizon,
        fleet=fleet,
        params=params,
        cols=cols,
        row_blocks=blocks,
        prices=prices,
        scenarios=scenarios,
    )


def build_robust_milp(
    fleet: FleetSpec,
    prices: PriceSeries,
    uset: UncertaintySet,
    xi_hat,
    params: AggregatorParams,
    horizon: Optional[Horizon] = None,
) -> ModelArtifacts:
    """Single-level MILP equivalent of the hierarchical dispatch problem.

    Availability ``alpha`` is binary within its hard bounds and at
    least ``k_min`` hours in total. The battery-draining subproblem is
    replaced by a dual certificate: multipliers feasible for its dual
    whose objective reaches the transport demand guarantee the
    worst-case injection does too (weak duality). The
    market-interaction subproblem is replaced by primal feasibility,
    dual feasibility and the strong-duality equality, pinning ``alpha``
    to an interaction-optimal profile. Products of ``alpha`` with
    charging/discharging are linearized exactly through the gated
    copies ``zc``/``zd`` (the availability bounds are binary data, so
    the gating constraints are tight).
    """
    horizon = _check_horizon(prices, horizon)
    _require_admissible(fleet, horizon)
    n_t, h = horizon.n_periods, horizon.period_hours
    n_v = len(fleet)
    xi_hat = np.asarray(xi_hat, dtype=float)
    if uset.n_evs != n_v or uset.n_periods != n_t:
        raise ModelBuildError("uncertainty set does not match fleet/horizon")
    if xi_hat.shape != (n_v,):
        raise ModelBuildError("xi_hat must have one entry per EV")
    if np.any(xi_hat < 0):
        raise ModelBuildError("expected transport demand must be >= 0")
    for v, ev in enumerate(fleet):
        # Transport energy can only be placed at away hours: with at
        # least max(k_min, sum a_lo) available hours forced, the
        # placement capacity is bounded and checked up front.
        slots = n_t - max(int(uset.k_min[v]), int(uset.a_lo[v].sum()))
        ceiling = (ev.e_max - ev.e_min) * slots
        if xi_hat[v] > ceiling + 1e-9:
            raise ModelBuildError(
                f"ev {ev.ev_id}: transport demand {xi_hat[v]:g} kWh exceeds "
                f"the {ceiling:g} kWh placeable within {slots} away hours"
            )

    b = _Builder("robust_dispatch")
    lam = prices.eur_per_kwh
    for t in range(n_t):
        j = b.var(("p", t), f"p_{t}", -math.inf, math.inf)
        b.m.add_objective_term(j, float(lam[t]) * h)
    for v, ev in enumerate(fleet):
        usable = ev.e_max - ev.e_min
        for t in range(n_t):
            b.var(("c", v, t), f"c_{v}_{t}", 0.0, ev.c_max)
            b.var(("d", v, t), f"d_{v}_{t}", 0.0, ev.d_max)
            b.var(("e", v, t), f"e_{v}_{t}", ev.e_min, ev.e_max)
            b.var(("s", v, t), f"s_{v}_{t}")
            b.var(("cdeg", v, t), f"cdeg_{v}_{t}")
            b.var(("tau", v, t), f"tau_{v}_{t}", 0.0, usable)
            b.var(
                ("alpha", v, t),
                f"alpha_{v}_{t}",
                float(uset.a_lo[v, t]),
                float(uset.a_hi[v, t]),
                integer=True,
            )
            b.var(("zc", v, t), f"zc_{v}_{t}", 0.0, ev.c_max)
            b.var(("zd", v, t), f"zd_{v}_{t}", 0.0, ev.d_max)
            b.var(("beta_lo_drain", v, t), f"beta_lo_drain_{v}_{t}", 0.0, math.inf)
            b.var(("beta_hi_drain", v, t), f"beta_hi_drain_{v}_{t}", -math.inf, 0.0)
            b.var(("beta_lo_inter", v, t), f"beta_lo_inter_{v}_{t}", 0.0, math.inf)
            b.var(("beta_hi_inter", v, t), f"beta_hi_inter_{v}_{t}", -math.inf, 0.0)
            b.m.add_objective_term(b.cols["cdeg", v, t], 1.0)
            b.m.add_objective_term(b.cols["s", v, t], params.pen_balance)
        b.var(("zeta_drain", v), f"zeta_drain_{v}", 0.0, math.inf)
        b.var(("zeta_inter", v), f"zeta_inter_{v}", 0.0, math.inf)

    for t in range(n_t):
        terms = [(b.cols["p", t], 1.0)]
        for v in range(n_v):
            terms += [(b.cols["c", v, t], -1.0), (b.cols["d", v, t], 1.0)]
        b.row("balance", terms, EQ, 0.0, f"balance_{t}")
    _feeder_rows(b, n_t, params.feeder_cap)

    for v, ev in enumerate(fleet):
        usable = ev.e_max - ev.e_min
        k_min = float(uset.k_min[v])
        for t in range(n_t):
            terms = [
                (b.cols["e", v, t], 1.0),
                (b.cols["zc", v, t], -ev.eta * h),
                (b.cols["d", v, t], h / ev.eta),
                (b.cols["tau", v, t], 1.0),
                (b.cols["s", v, t], -1.0),
            ]
            rhs = ev.e_init if t == 0 else 0.0
            if t > 0:
                terms.append((b.cols["e", v, t - 1], -1.0))
            b.row("dynamics", terms, EQ, rhs, f"dynamics_{v}_{t}")
            b.row(
                "discharge_avail",
                [(b.cols["d", v, t], 1.0), (b.cols["alpha", v, t], -ev.d_max)],
                LE,
                0.0,
                f"discharge_avail_{v}_{t}",
            )
            b.row(
                "degradation",
                [
                    (b.cols["cdeg", v, t], 1.0),
                    (b.cols["d", v, t], -ev.deg_coef * h / ev.eta),
                    (b.cols["tau", v, t], -ev.deg_coef),
                ],
                EQ,
                0.0,
                f"degradation_{v}_{t}",
            )
            b.row(
                "transport_motion",
                [(b.cols["tau", v, t], 1.0), (b.cols["alpha", v, t], usable)],
                LE,
                usable,
                f"transport_motion_{v}_{t}",
            )
            # Dual-balance rows of the two availability subproblems.
            b.row(
                "drain_dual",
                [
                    (b.cols["zeta_drain", v], 1.0),
                    (b.cols["beta_lo_drain", v, t], 1.0),
                    (b.cols["beta_hi_drain", v, t], 1.0),
                    (b.cols["c", v, t], -ev.eta * h),
                    (b.cols["d", v, t], h / ev.eta),
                ],
                EQ,
                0.0,
                f"drain_dual_{v}_{t}",
            )
            b.row(
                "interact_dual",
                [
                    (b.cols["zeta_inter", v], 1.0),
                    (b.cols["beta_lo_inter", v, t], 1.0),
                    (b.cols["beta_hi_inter", v, t], 1.0),
                    (b.cols["c", v, t], -ev.eta * h),
                    (b.cols["d", v, t], -h / ev.eta),
                ],
                EQ,
                0.0,
                f"interact_dual_{v}_{t}",
            )
            # Exact linearization of alpha*c and alpha*d.
            b.row(
                "charge_split_lo",
                [(b.cols["c", v, t], 1.0), (b.cols["zc", v, t], -1.0)],
                GE,
                0.0,
                f"charge_split_lo_{v}_{t}",
            )
            b.row(
                "charge_split_hi",
                [
                    (b.cols["c", v, t], 1.0),
                    (b.cols["zc", v, t], -1.0),
                    (b.cols["alpha", v, t], ev.c_max),
                ],
                LE,
                ev.c_max,
                f"charge_split_hi_{v}_{t}",
            )
            b.row(
                "charge_gate",
                [(b.cols["zc", v, t], 1.0), (b.cols["alpha", v, t], -ev.c_max)],
                LE,
                0.0,
                f"charge_gate_{v}_{t}",
            )
            b.row(
                "discharge_split_lo",
                [(b.cols["d", v, t], 1.0), (b.cols["zd", v, t], -1.0)],
                GE,
                0.0,
                f"discharge_split_lo_{v}_{t}",
            )
            b.row(
                "discharge_split_hi",
                [
                    (b.cols["d", v, t], 1.0),
                    (b.cols["zd", v, t], -1.0),
                    (b.cols["alpha", v, t], ev.d_max),
                ],
                LE,
                ev.d_max,
                f"discharge_split_hi_{v}_{t}",
            )
            b.row(
                "discharge_gate",
                [(b.cols["zd", v, t], 1.0), (b.cols["alpha", v, t], -ev.d_max)],
                LE,
                0.0,
                f"discharge_gate_{v}_{t}",
            )
        b.row("terminal", [(b.cols["e", v, n_t - 1], 1.0)], EQ, ev.e_init, f"terminal_{v}")
        b.row(
            "transport_total",
            [(b.cols["tau", v, t], 1.0) for t in range(n_t)],
            EQ,
            float(xi_hat[v]),
            f"transport_total_{v}",
        )
        b.row(
            "drain_epigraph",
            [(b.cols["zeta_drain", v], k_min)]
            + [
                (b.cols["beta_lo_drain", v, t], float(uset.a_lo[v, t]))
                for t in range(n_t)
            ]
            + [
                (b.cols["beta_hi_drain", v, t], float(uset.a_hi[v, t]))
                for t in range(n_t)
            ],
            GE,
            float(xi_hat[v]),
            f"drain_epigraph_{v}",
        )
        b.row(
            "min_hours",
            [(b.cols["alpha", v, t], 1.0) for t in range(n_t)],
            GE,
            k_min,
            f"min_hours_{v}",
        )
        b.row(
            "interact_strong_duality",
            [(b.cols["zeta_inter", v], k_min)]
            + [
                (b.cols["beta_lo_inter", v, t], float(uset.a_lo[v, t]))
                for t in range(n_t)
            ]
            + [
                (b.cols["beta_hi_inter", v, t], float(uset.a_hi[v, t]))
                for t in range(n_t)
            ]
            + [(b.cols["zc", v, t], -ev.eta * h) for t in range(n_t)]
            + [(b.cols["zd", v, t], -h / ev.eta) for t in range(n_t)],
            EQ,
            0.0,
            f"interact_strong_duality_{v}",
        )

    model, cols, blocks = b.finish()
    assert model.n_vars == 13 * n_v * n_t + 2 * n_v + n_t
    return ModelArtifacts(
        model=model,
        kind=ModelKind.ROBUST.value,
        horizon=horizon,
        fleet=fleet,
        params=params,
        cols=cols,
        row_blocks=blocks,
        prices=prices,
        uset=uset,
        xi_hat=xi_hat,
    )


def build_feasibility(
    fleet: FleetSpec,
    realized_avail,
    realized_cons,
    p_committed,
    params: AggregatorParams,
    horizon: Optional[Horizon] = None,
) -> ModelArtifacts:
    """Ex-post feasibility LP for a committed market position.

    The fleet may consume at most the purchased power and must deliver
    at least the sold power; shortfall on sales is absorbed by
    ``p_minus`` (present only at hours with a committed sale) and
    battery-balance violations by the slack ``s``. Degradation is
    irrelevant here and omitted. Always feasible: zeroing the schedule
    and covering consumption with slack satisfies every row.
    """
    realized_avail = np.asarray(realized_avail)
    realized_cons = np.asarray(realized_cons, dtype=float)
    p_committed = np.asarray(p_committed, dtype=float)
    n_v = len(fleet)
    horizon = horizon or Horizon(n_periods=p_committed.size)
    n_t, h = horizon.n_periods, horizon.period_hours
    _require_admissible(fleet, horizon)
    if realized_avail.shape != (n_v, n_t) or realized_cons.shape != (n_v, n_t):
        raise ModelBuildError("realized data must have shape (n_evs, n_periods)")
    if p_committed.shape != (n_t,):
        raise ModelBuildError("committed position must have one entry per period")
    if not np.isin(realized_avail, (0, 1)).all():
        raise ModelBuildError("realized availability must be binary")
    if np.any(realized_cons < 0):
        raise ModelBuildError("realized consumption must be >= 0")

    b = _Builder("ex_post_feasibility")
    for v, ev in enumerate(fleet):
        for t in range(n_t):
            avail = float(realized_avail[v, t])
            b.var(("c", v, t), f"c_{v}_{t}", 0.0, ev.c_max)
            b.var(("d", v, t), f"d_{v}_{t}", 0.0, ev.d_max * avail)
            b.var(("e", v, t), f"e_{v}_{t}", ev.e_min, ev.e_max)
            b.var(("s", v, t), f"s_{v}_{t}")
            b.m.add_objective_term(b.cols["s", v, t], params.pen_balance)
    for t in range(n_t):
        if p_committed[t] < 0.0:
            j = b.var(("pneg", t), f"pneg_{t}")
            b.m.add_objective_term(j, params.pen_sale * h)

    for t in range(n_t):
        terms = []
        for v in range(n_v):
            terms += [(b.cols["c", v, t], 1.0), (b.cols["d", v, t], -1.0)]
        if ("pneg", t) in b.cols:
            terms.append((b.cols["pneg", t], -1.0))
        b.row("sale_commitment", terms, LE, float(p_committed[t]), f"sale_commitment_{t}")

    for v, ev in enumerate(fleet):
        for t in range(n_t):
            avail = float(realized_avail[v, t])
            terms = [
                (b.cols["e", v, t], 1.0),
                (b.cols["c", v, t], -ev.eta * h * avail),
                (b.cols["d", v, t], h / ev.eta),
                (b.cols["s", v, t], -1.0),
            ]
            rhs = (ev.e_init if t == 0 else 0.0) - float(realized_cons[v, t])
            if t > 0:
                terms.append((b.cols["e", v, t - 1], -1.0))
            b.row("dynamics", terms, EQ, rhs, f"dynamics_{v}_{t}")
        b.row("terminal", [(b.cols["e", v, n_t - 1], 1.0)], EQ, ev.e_init, f"terminal_{v}")

    model, cols, blocks = b.finish()
    return ModelArtifacts(
        model=model,
        kind="feasibility",
        horizon=horizon,
        fleet=fleet,
        params=params,
        cols=cols,
        row_blocks=blocks,
        p_committed=p_committed,
        realized_avail=realized_avail,
        realized_cons=realized_cons,
    )


def _solution_vector(solution: Union[LpSolution, MilpSolution]):
    if isinstance(solution, MilpSolution):
        if not solution.usable:
            raise DecodeError(f"MILP solution not decodable: status {solution.status}")
        return solution.x, float(solution.objective), solution.status.value, solution.gap
    if solution.status is not SolveStatus.OPTIMAL:
        raise DecodeError(f"LP solution not decodable: status {solution.status}")
    return solution.x, float(solution.objective), solution.status.value, 0.0


def decode(artifacts: ModelArtifacts, solution) -> DispatchSolution:
    """Interpret a solver answer and verify the solution invariants.

    Checks (to within ``DECODE_TOL``): the market position matches the
    fleet net exchange (or dominates it per scenario), feeder and
    battery bounds, the terminal state-of-charge, non-negativity, no
    simultaneous charging and discharging, and -- for robust solutions
    -- the gating identities plus the two oracle audits. Violations
    raise :class:`DecodeError` naming the offending block.
    """
    x, objective, status, gap = _solution_vector(solution)
    kind = artifacts.kind
    if kind == "feasibility":
        raise DecodeError("use decode_feasibility for ex-post artifacts")
    fleet = artifacts.fleet
    n_t = artifacts.horizon.n_periods
    h = artifacts.horizon.period_hours
    n_v = len(fleet)
    rt = range(n_t)
    rv = range(n_v)
    tol = DECODE_TOL

    p = artifacts.col_array(x, "p", rt)
    if np.any(np.abs(p) > artifacts.params.feeder_cap + tol):
        raise DecodeError("feeder bound violated (block feeder_hi/feeder_lo)")

    if kind == ModelKind.STOCHASTIC.value:
        rw = range(artifacts.scenarios.n_scenarios)
        c = artifacts.col_array(x, "c", rw, rv, rt)
        d = artifacts.col_array(x, "d", rw, rv, rt)
        e = artifacts.col_array(x, "e", rw, rv, rt)
        s = artifacts.col_array(x, "s", rw, rv, rt)
        cdeg = artifacts.col_array(x, "cdeg", rw, rv, rt)
        net = (c - d).sum(axis=1)  # (n_scenarios, n_periods)
        if np.any(net > p[None, :] + tol):
            raise DecodeError("scenario exchange exceeds market position (block balance)")
    else:
        c = artifacts.col_array(x, "c", rv, rt)
        d = artifacts.col_array(x, "d", rv, rt)
        e = artifacts.col_array(x, "e", rv, rt)
        s = artifacts.col_array(x, "s", rv, rt)
        cdeg = artifacts.col_array(x, "cdeg", rv, rt)
        if np.max(np.abs(p - (c - d).sum(axis=0))) > tol:
            raise DecodeError("market position != fleet net exchange (block balance)")

    for arr, name in ((c, "c"), (d, "d"), (s, "s"), (cdeg, "cdeg")):
        if np.any(arr < -tol):
            raise DecodeError(f"negative {name} in solution")
    if np.any(np.minimum(c, d) > tol):
        raise DecodeError("simultaneous charging and discharging in solution")

    e_min = fleet.array("e_min")
    e_max = fleet.array("e_max")
    e_init = fleet.array("e_init")
    ax = 0 if e.ndim == 2 else 1
    if np.any(e < np.expand_dims(e_min, -1) - tol) or np.any(
        e > np.expand_dims(e_max, -1) + tol
    ):
        raise DecodeError("stored energy outside battery bounds (block dynamics)")
    e_final = e[..., -1]
    if np.max(np.abs(e_final - e_init)) > tol:
        raise DecodeError("terminal state-of-charge mismatch (block terminal)")

    tau = alpha = zc = zd = duals_drain = duals_interact = None
    pi = None
    if kind == ModelKind.STOCHASTIC.value:
        pi = artifacts.scenarios.pi
    if kind == ModelKind.ROBUST.value:
        tau = artifacts.col_array(x, "tau", rv, rt)
        alpha_raw = artifacts.col_array(x, "alpha", rv, rt)
        alpha = np.round(alpha_raw)
        if np.max(np.abs(alpha_raw - alpha)) > 1e-6:
            raise DecodeError("availability not integral in robust solution")
        zc = artifacts.col_array(x, "zc", rv, rt)
        zd = artifacts.col_array(x, "zd", rv, rt)
        if np.max(np.abs(zc - alpha * c)) > tol or np.max(np.abs(zd - alpha * d)) > tol:
            raise DecodeError("gating identity broken (blocks charge/discharge_split)")
        duals_drain = {
            "zeta": artifacts.col_array(x, "zeta_drain", rv),
            "beta_lo": artifacts.col_array(x, "beta_lo_drain", rv, rt),
            "beta_hi": artifacts.col_array(x, "beta_hi_drain", rv, rt),
        }
        duals_interact = {
            "zeta": artifacts.col_array(x, "zeta_inter", rv),
            "beta_lo": artifacts.col_array(x, "beta_lo_inter", rv, rt),
            "beta_hi": artifacts.col_array(x, "beta_hi_inter", rv, rt),
        }

    # Energy conservation: the dynamics telescope to the terminal row.
    if kind == ModelKind.ROBUST.value:
        charge_term = artifacts.horizon.period_hours * zc * fleet.array("eta")[:, None]
    elif kind == ModelKind.DETERMINISTIC.value:
        charge_term = h * c * artifacts.alpha_hat * fleet.array("eta")[:, None]
    else:
        charge_term = h * c * artifacts.scenarios.avail * fleet.array("eta")[None, :, None]
    tau_term = (
        tau
        if kind == ModelKind.ROBUST.value
        else (artifacts.tau_hat if kind == ModelKind.DETERMINISTIC.value else artifacts.scenarios.cons)
    )
    discharge_term = h * d / fleet.array("eta")[(None,) * (d.ndim - 2) + (slice(None), None)]
    balance = (charge_term - discharge_term - tau_term + s).sum(axis=-1)
    if np.max(np.abs(balance - (e_final - e_init))) > 1e-5:
        raise DecodeError("energy balance does not telescope (block dynamics)")

    sol = DispatchSolution(
        model_kind=ModelKind(kind),
        p=p,
        c=c,
        d=d,
        e=e,
        s=s,
        cdeg=cdeg,
        objective=objective,
        pi=pi,
        tau=tau,
        alpha=alpha,
        zc=zc,
        zd=zd,
        duals_drain=duals_drain,
        duals_interact=duals_interact,
        solver_status=status,
        mip_gap=gap,
    )
    if kind == ModelKind.ROBUST.value:
        audit_robust_solution(artifacts, sol)
    return sol


def audit_robust_solution(artifacts: ModelArtifacts, sol: DispatchSolution) -> dict:
    """Re-check a robust solution against the independent greedy oracles.

    Confirms that (i) the worst-case net injection computed from
    scratch still covers the transport demand, and (ii) the greedy
    optimum of the interaction subproblem equals the dual objective
    embedded in the solution (the strong-duality certificate). Raises
    :class:`DecodeError` beyond ``DECODE_TOL``; returns the per-EV
    numbers for reporting.
    """
    uset = artifacts.uset
    xi_hat = artifacts.xi_hat
    h = artifacts.horizon.period_hours
    psi = np.empty(len(artifacts.fleet))
    inter_oracle = np.empty(len(artifacts.fleet))
    inter_dual = np.empty(len(artifacts.fleet))
    # Solver answers carry sub-tolerance negative noise; the oracles
    # take exact schedules, so clamp at zero first.
    c_clean = np.maximum(sol.c, 0.0)
    d_clean = np.maximum(sol.d, 0.0)
    for v, ev in enumerate(artifacts.fleet):
        inst_a = LowerLevelInstance(
            draining_weights(c_clean[v], d_clean[v], ev.eta, h),
            int(uset.k_min[v]),
            uset.a_lo[v],
            uset.a_hi[v],
        )
        _, psi[v] = solve_lower_A(inst_a)
        if psi[v] < xi_hat[v] - DECODE_TOL:
            raise DecodeError(
                f"ev {ev.ev_id}: worst-case injection {psi[v]:.9g} kWh below "
                f"transport demand {xi_hat[v]:.9g} (block drain_epigraph)"
            )
        inst_b = LowerLevelInstance(
            interaction_weights(c_clean[v], d_clean[v], ev.eta, h),
            int(uset.k_min[v]),
            uset.a_lo[v],
            uset.a_hi[v],
        )
        _, inter_oracle[v] = solve_lower_B(inst_b)
        inter_dual[v] = float(
            uset.k_min[v] * sol.duals_interact["zeta"][v]
            + uset.a_lo[v] @ sol.duals_interact["beta_lo"][v]
            + uset.a_hi[v] @ sol.duals_interact["beta_hi"][v]
        )
        if abs(inter_oracle[v] - inter_dual[v]) > DECODE_TOL:
            raise DecodeError(
                f"ev {ev.ev_id}: interaction oracle {inter_oracle[v]:.9g} != "
                f"dual value {inter_dual[v]:.9g} (block interact_strong_duality)"
            )
    return {
        "psi_wc": psi,
        "interaction_oracle": inter_oracle,
        "interaction_dual": inter_dual,
    }


def decode_feasibility(artifacts: ModelArtifacts, solution) -> FeasibilityOutcome:
    """Interpret an ex-post feasibility solve."""
    if artifacts.kind != "feasibility":
        raise DecodeError("artifacts are not an ex-post feasibility model")
    x, objective, _, _ = _solution_vector(solution)
    n_t = artifacts.horizon.n_periods
    h = artifacts.horizon.period_hours
    rv = range(len(artifacts.fleet))
    rt = range(n_t)
    c = artifacts.col_array(x, "c", rv, rt)
    d = artifacts.col_array(x, "d", rv, rt)
    e = artifacts.col_array(x, "e", rv, rt)
    s = artifacts.col_array(x, "s", rv, rt)
    p_minus = np.zeros(n_t)
    for t in rt:
        if ("pneg", t) in artifacts.cols:
            p_minus[t] = x[artifacts.cols["pneg", t]]
    return FeasibilityOutcome(
        objective=objective,
        c=c,
        d=d,
        e=e,
        s=s,
        p_minus=p_minus,
        slack_kwh=float(s.sum()),
        unsold_kwh=float(p_minus.sum() * h),
    )
