"""Exact solvers for the worst-case availability subproblems.

For one EV and a schedule (c, d), the adversary picks a binary
availability profile ``alpha`` within hard hourly bounds and subject to
a minimum count of available hours, minimizing a linear function of
``alpha``:

* the *draining* problem uses weights ``eta*c - d/eta`` (net chemical
  energy injected per hour) and its optimum ``psi_wc`` is the worst-case
  net energy that still reaches the battery;
* the *interaction* problem uses weights ``eta*c + d/eta`` (total
  exchange with the grid) and its optimal profile is the one that shuts
  the EV out of the market as much as possible.

Both share one constraint structure whose matrix is totally unimodular
(a single all-ones cardinality row on top of variable bounds), so a
simple greedy is exact and the LP relaxation has integral optimal
vertices; the test suite drives both facts against each other.

``enumerate_bilevel`` is a desk-scale oracle for the full hierarchical
dispatch problem: it enumerates candidate availability profiles per EV
and solves one LP per combination, with the adversary's optimality
imposed through explicit cuts over the (finite) profile lattice. It
exists only to certify the single-level MILP reformulation on tiny
instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .domain import AggregatorParams, FleetSpec, Horizon, PriceSeries, UncertaintySet
from .lp_core import EQ, GE, LE, LinearModel, SolveStatus, solve_lp

__all__ = [
    "LowerLevelInstance",
    "InfeasibleInstanceError",
    "SizeGuardError",
    "solve_lower_A",
    "solve_lower_B",
    "draining_weights",
    "interaction_weights",
    "enumerate_profiles",
    "relaxation_model",
    "BilevelResult",
    "enumerate_bilevel",
]


class InfeasibleInstanceError(ValueError):
    """The availability bounds cannot reach the required hour count."""


class SizeGuardError(ValueError):
    """Instance too large for exhaustive enumeration."""


@dataclass(frozen=True)
class LowerLevelInstance:
    """One adversarial availability problem for one EV.

    ``weights`` are in kWh per hour of availability. Feasibility
    (``sum(a_hi) >= k_min``) is checked by the solvers so that
    deliberately infeasible instances can be constructed in tests.
    """

    weights: np.ndarray  # (n_periods,)
    k_min: int
    a_lo: np.ndarray  # binary lower bounds
    a_hi: np.ndarray  # binary upper bounds

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        lo = np.asarray(self.a_lo, dtype=np.int8)
        hi = np.asarray(self.a_hi, dtype=np.int8)
        if not (w.shape == lo.shape == hi.shape) or w.ndim != 1:
            raise ValueError("weights and bounds must be 1-d with equal length")
        if not (np.isin(lo, (0, 1)).all() and np.isin(hi, (0, 1)).all()):
            raise ValueError("availability bounds must be binary")
        if np.any(lo > hi):
            raise ValueError("a_lo must not exceed a_hi")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if not (0 <= self.k_min <= w.size):
            raise ValueError("k_min must lie in [0, n_periods]")
        for field_name, arr in (("weights", w), ("a_lo", lo), ("a_hi", hi)):
            arr.setflags(write=False)
            object.__setattr__(self, field_name, arr)

    @property
    def n_periods(self) -> int:
        return self.weights.size


def draining_weights(c, d, eta: float, period_hours: float = 1.0) -> np.ndarray:
    """Net chemical energy injected per available hour (kWh, any sign)."""
    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    return (eta * c - d / eta) * period_hours


def interaction_weights(c, d, eta: float, period_hours: float = 1.0) -> np.ndarray:
    """Total grid exchange per available hour (kWh, non-negative)."""
    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    return (eta * c + d / eta) * period_hours


def _greedy_min_profile(inst: LowerLevelInstance):
    """Exact minimizer of ``weights @ alpha`` over the instance lattice.

    Start from the forced-available hours, switch on every free hour
    with a negative weight, then top up to the hour-count floor with the
    cheapest free hours (ties to the lowest period index).
    """
    if int(inst.a_hi.sum()) < inst.k_min:
        raise InfeasibleInstanceError(
            f"sum(a_hi)={int(inst.a_hi.sum())} < k_min={inst.k_min}"
        )
    alpha = inst.a_lo.astype(np.int8).copy()
    free = (inst.a_lo == 0) & (inst.a_hi == 1)
    alpha[free & (inst.weights < 0)] = 1
    deficit = inst.k_min - int(alpha.sum())
    if deficit > 0:
        candidates = np.nonzero(free & (alpha == 0))[0]
        order = candidates[np.argsort(inst.weights[candidates], kind="stable")]
        alpha[order[:deficit]] = 1
    return alpha, float(inst.weights @ alpha)


def solve_lower_A(inst: LowerLevelInstance):
    """Worst-case battery draining: profile and optimal net injection (kWh)."""
    return _greedy_min_profile(inst)


def solve_lower_B(inst: LowerLevelInstance):
    """Worst-case market interaction: profile and optimal exchange (kWh).

    Interaction weights are sums of non-negative terms; negative input
    indicates the caller built the instance with the wrong weights.
    """
    if np.any(inst.weights < 0):
        raise ValueError("interaction weights must be non-negative")
    return _greedy_min_profile(inst)


def relaxation_model(inst: LowerLevelInstance) -> LinearModel:
    """Continuous relaxation of the instance as a LinearModel.

    One cardinality row over all periods plus per-period bounds: the
    constraint matrix is totally unimodular, so with binary bounds and
    an integer hour count every optimal vertex is integral.
    """
    m = LinearModel("availability_relaxation")
    cols = [
        m.add_var(f"alpha_{t}", float(inst.a_lo[t]), float(inst.a_hi[t]))
        for t in range(inst.n_periods)
    ]
    for t, j in enumerate(cols):
        if inst.weights[t] != 0.0:
            m.add_objective_term(j, float(inst.weights[t]))
    m.add_row([(j, 1.0) for j in cols], GE, float(inst.k_min), name="min_hours")
    return m


def enumerate_profiles(
    a_lo, a_hi, k_min: int, limit: int = 4096
) -> np.ndarray:
    """All binary profiles within bounds meeting the hour-count floor.

    Rows are ordered by the free-hour bit pattern (lowest period is the
    most significant bit), which keeps downstream enumeration
    deterministic. Guarded against combinatorial blow-up via ``limit``.
    """
    a_lo = np.asarray(a_lo, dtype=np.int8)
    a_hi = np.asarray(a_hi, dtype=np.int8)
    free = np.nonzero((a_lo == 0) & (a_hi == 1))[0]
    if 2 ** free.size > limit:
        raise SizeGuardError(
            f"{free.size} free hours give {2 ** free.size} profiles > limit {limit}"
        )
    combos = np.array(
        list(itertools.product((0, 1), repeat=free.size)), dtype=np.int8
    ).reshape(-1, free.size)
    profiles = np.tile(a_lo, (combos.shape[0], 1))
    profiles[:, free] = combos
    keep = profiles.sum(axis=1) >= k_min
    out = profiles[keep]
    if out.shape[0] == 0:
        raise InfeasibleInstanceError("no profile reaches k_min")
    return out


@dataclass(frozen=True)
class BilevelResult:
    objective: float
    p: np.ndarray  # (n_periods,), kW
    c: np.ndarray  # (n_evs, n_periods), kW
    d: np.ndarray
    alpha: np.ndarray  # chosen adversarial profiles, binary
    tau: np.ndarray  # kWh
    n_lp_solves: int


def enumerate_bilevel(
    fleet: FleetSpec,
    prices: PriceSeries,
    uset: UncertaintySet,
    xi_hat,
    params: AggregatorParams,
    horizon: Optional[Horizon] = None,
    profile_limit: int = 4096,
    combo_limit: int = 100_000,
) -> BilevelResult:
    """Exact optimum of the hierarchical dispatch problem, by enumeration.

    For every combination of candidate availability profiles (one per
    EV) an LP over the aggregator's variables is solved in which

    * the worst-case draining requirement holds against *every* profile
      in the lattice (one cut per profile), and
    * the candidate profile is interaction-optimal against every other
      profile (one cut per profile).

    A candidate combination is admissible exactly when this LP is
    feasible, and its value equals the hierarchical objective under
    that adversarial response; the enumeration minimum is therefore the
    exact bilevel optimum. Desk-scale only: the LP count is the product
    of per-EV profile counts, guarded by ``combo_limit``.
    """
    horizon = horizon or Horizon(n_periods=prices.n_periods)
    n_t = horizon.n_periods
    n_evs = len(fleet)
    xi_hat = np.asarray(xi_hat, dtype=float)
    if uset.n_evs != n_evs or uset.n_periods != n_t or xi_hat.size != n_evs:
        raise ValueError("fleet, uncertainty set and demand sizes disagree")

    per_ev_profiles = [
        enumerate_profiles(uset.a_lo[v], uset.a_hi[v], int(uset.k_min[v]), profile_limit)
        for v in range(n_evs)
    ]
    n_combos = math.prod(p.shape[0] for p in per_ev_profiles)
    if n_combos > combo_limit:
        raise SizeGuardError(f"{n_combos} profile combinations > limit {combo_limit}")

    best: Optional[BilevelResult] = None
    n_solves = 0
    for combo in itertools.product(*(range(p.shape[0]) for p in per_ev_profiles)):
        alpha = np.stack(
            [per_ev_profiles[v][combo[v]] for v in range(n_evs)], axis=0
        )
        model, cols = _commitment_lp(
            fleet, prices, uset, xi_hat, params, horizon, alpha, per_ev_profiles
        )
        sol = solve_lp(model)
        n_solves += 1
        if sol.status is not SolveStatus.OPTIMAL:
            continue  # candidate profile is not an admissible response
        if best is None or sol.objective < best.objective - 1e-12:
            x = sol.x
            take = lambda role: np.array(
                [[x[cols[role, v, t]] for t in range(n_t)] for v in range(n_evs)]
            )
            best = BilevelResult(
                objective=float(sol.objective),
                p=np.array([x[cols["p", t]] for t in range(n_t)]),
                c=take("c"),
                d=take("d"),
                alpha=alpha,
                tau=take("tau"),
                n_lp_solves=n_solves,
            )
    if best is None:
        raise InfeasibleInstanceError("no admissible availability combination")
    return replace(best, n_lp_solves=n_solves)


def _commitment_lp(
    fleet, prices, uset, xi_hat, params, horizon, alpha, per_ev_profiles
):
    """Upper-level LP for one fixed adversarial availability choice."""
    n_t = horizon.n_periods
    h = horizon.period_hours
    lam = prices.eur_per_kwh
    m = LinearModel("bilevel_commitment")
    cols: dict = {}

    for t in range(n_t):
        cols["p", t] = m.add_var(f"p_{t}", -math.inf, math.inf)
    for v, ev in enumerate(fleet):
        for t in range(n_t):
            cols["c", v, t] = m.add_var(f"c_{v}_{t}", 0.0, ev.c_max)
            cols["d", v, t] = m.add_var(
                f"d_{v}_{t}", 0.0, ev.d_max * float(alpha[v, t])
            )
            cols["e", v, t] = m.add_var(f"e_{v}_{t}", ev.e_min, ev.e_max)
            cols["s", v, t] = m.add_var(f"s_{v}_{t}", 0.0, math.inf)
            cols["cdeg", v, t] = m.add_var(f"cdeg_{v}_{t}", 0.0, math.inf)
            tau_hi = 0.0 if alpha[v, t] else (ev.e_max - ev.e_min)
            cols["tau", v, t] = m.add_var(f"tau_{v}_{t}", 0.0, tau_hi)

    for t in range(n_t):
        m.add_objective_term(cols["p", t], float(lam[t]) * h)
        terms = [(cols["p", t], 1.0)]
        for v in range(len(fleet)):
            terms += [(cols["c", v, t], -1.0), (cols["d", v, t], 1.0)]
        m.add_row(terms, EQ, 0.0, name=f"balance_{t}")
        m.add_row([(cols["p", t], 1.0)], LE, params.feeder_cap, name=f"feeder_hi_{t}")
        m.add_row([(cols["p", t], 1.0)], GE, -params.feeder_cap, name=f"feeder_lo_{t}")

    for v, ev in enumerate(fleet):
        for t in range(n_t):
            m.add_objective_term(cols["cdeg", v, t], 1.0)
            m.add_objective_term(cols["s", v, t], params.pen_balance)
            terms = [
                (cols["e", v, t], 1.0),
                (cols["c", v, t], -ev.eta * h * float(alpha[v, t])),
                (cols["d", v, t], h / ev.eta),
                (cols["tau", v, t], 1.0),
                (cols["s", v, t], -1.0),
            ]
            rhs = 0.0
            if t == 0:
                rhs = ev.e_init
            else:
                terms.append((cols["e", v, t - 1], -1.0))
            m.add_row(terms, EQ, rhs, name=f"dynamics_{v}_{t}")
            m.add_row(
                [
                    (cols["cdeg", v, t], 1.0),
                    (cols["d", v, t], -ev.deg_coef * h / ev.eta),
                    (cols["tau", v, t], -ev.deg_coef),
                ],
                EQ,
                0.0,
                name=f"degradation_{v}_{t}",
            )
        m.add_row([(cols["e", v, n_t - 1], 1.0)], EQ, ev.e_init, name=f"terminal_{v}")
        m.add_row(
            [(cols["tau", v, t], 1.0) for t in range(n_t)],
            EQ,
            float(xi_hat[v]),
            name=f"transport_total_{v}",
        )

        # Adversarial cuts over the whole profile lattice. Draining:
        # every profile must still leave the required energy in the
        # battery. Interaction: the candidate must weakly beat every
        # profile on total exchange, making it an optimal response.
        for g_idx in range(per_ev_profiles[v].shape[0]):
            g = per_ev_profiles[v][g_idx]
            terms = []
            for t in range(n_t):
                if g[t]:
                    terms += [
                        (cols["c", v, t], ev.eta * h),
                        (cols["d", v, t], -h / ev.eta),
                    ]
            if terms:
                m.add_row(terms, GE, float(xi_hat[v]), name=f"drain_cut_{v}_{g_idx}")
            elif xi_hat[v] > 0:
                # all-away profile: worst-case injection is 0 < demand,
                # so no schedule can be admissible
                m.add_row([(cols["c", v, 0], 1.0)], LE, -1.0,
                          name=f"drain_cut_infeasible_{v}_{g_idx}")
            diff = alpha[v].astype(float) - g.astype(float)
            terms = []
            for t in range(n_t):
                if diff[t] != 0.0:
                    terms += [
                        (cols["c", v, t], ev.eta * h * diff[t]),
                        (cols["d", v, t], (h / ev.eta) * diff[t]),
                    ]
            if terms:
                m.add_row(terms, LE, 0.0, name=f"interact_cut_{v}_{g_idx}")
    return m, cols
