"""Turn availability/consumption history into model inputs.

One history window (the most recent same-weekday records per EV) feeds
three consumers:

* expected availability/consumption profiles for the deterministic model,
* one scenario per historical day for the stochastic model,
* the per-EV uncertainty description (minimum available hours plus hard
  hourly bounds) for the robust model.

All operations are pure functions over immutable windows and vectorize
across the fleet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import AvailabilityHistory, UncertaintySet, _frozen_array

__all__ = [
    "HistoryWindow",
    "ScenarioSet",
    "same_weekday_window",
    "estimate_k",
    "estimate_bounds",
    "expected_profiles",
    "build_scenarios",
    "expected_daily_demand",
    "estimate_uncertainty_set",
]


@dataclass(frozen=True)
class HistoryWindow:
    """The L most recent same-weekday records per EV, oldest first.

    Every record spans the full horizon; days with missing hours are
    rejected at ingestion because the bound/product formulas below are
    undefined on gaps.
    """

    avail: np.ndarray  # (n_evs, L, n_periods), binary
    cons: np.ndarray  # (n_evs, L, n_periods), kWh

    def __post_init__(self):
        avail = _frozen_array(self.avail, dtype=np.int8, ndim=3)
        cons = _frozen_array(self.cons, ndim=3)
        if avail.shape != cons.shape:
            raise ValueError("avail/cons shape mismatch")
        if avail.shape[1] < 1:
            raise ValueError("window must contain at least one day")
        if not np.isin(avail, (0, 1)).all():
            raise ValueError("window availability must be binary")
        if np.any(cons < 0):
            raise ValueError("window consumption must be >= 0")
        object.__setattr__(self, "avail", avail)
        object.__setattr__(self, "cons", cons)

    @property
    def n_evs(self) -> int:
        return self.avail.shape[0]

    @property
    def n_days(self) -> int:
        return self.avail.shape[1]

    @property
    def n_periods(self) -> int:
        return self.avail.shape[2]


@dataclass(frozen=True)
class ScenarioSet:
    """Equiprobable recourse scenarios carrying realized (avail, cons)."""

    avail: np.ndarray  # (n_scenarios, n_evs, n_periods), binary
    cons: np.ndarray  # (n_scenarios, n_evs, n_periods), kWh
    pi: np.ndarray  # (n_scenarios,), probabilities

    def __post_init__(self):
        avail = _frozen_array(self.avail, dtype=np.int8, ndim=3)
        cons = _frozen_array(self.cons, ndim=3)
        pi = _frozen_array(self.pi, ndim=1)
        if avail.shape != cons.shape or avail.shape[0] != pi.size:
            raise ValueError("inconsistent scenario shapes")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("scenario probabilities must be positive and sum to 1")
        object.__setattr__(self, "avail", avail)
        object.__setattr__(self, "cons", cons)
        object.__setattr__(self, "pi", pi)

    @property
    def n_scenarios(self) -> int:
        return self.pi.size


def same_weekday_window(
    history: AvailabilityHistory, day: int, lookback: int = 4, stride: int = 7
) -> HistoryWindow:
    """Window of the ``lookback`` most recent same-weekday records before ``day``.

    With daily records and ``stride=7``, "same weekday one week earlier"
    is ``day - 7``, and the window holds days ``day - 7*lookback .. day - 7``
    in chronological order.
    """
    if lookback < 1:
        raise ValueError("lookback must be >= 1")
    days = [day - stride * k for k in range(lookback, 0, -1)]
    if days[0] < 0 or day > history.n_days:
        raise ValueError(
            f"day {day} needs history back to day {days[0]}, "
            f"but records cover days 0..{history.n_days - 1}"
        )
    return HistoryWindow(
        avail=history.avail[:, days, :], cons=history.cons[:, days, :]
    )


def estimate_k(window: HistoryWindow) -> np.ndarray:
    """Minimum available hours per EV: floor of the mean daily count.

    Computed in integer arithmetic (``sum // L``), so the floor is exact.
    """
    per_day = window.avail.sum(axis=2, dtype=np.int64)  # (n_evs, L)
    return per_day.sum(axis=1) // window.n_days


def estimate_bounds(window: HistoryWindow):
    """Hard per-hour availability bounds from the window.

    The upper bound is 1 unless the EV was away at that hour on every
    window day; the lower bound is 1 only if it was plugged in on every
    window day. Hours where all days agree are thereby pinned.
    """
    a_hi = 1 - np.prod(1 - window.avail, axis=1, dtype=np.int64)
    a_lo = np.prod(window.avail, axis=1, dtype=np.int64)
    return a_lo.astype(np.int8), a_hi.astype(np.int8)


def expected_profiles(window: HistoryWindow):
    """Per-hour mean availability and mean driving consumption."""
    alpha_hat = window.avail.mean(axis=1)
    tau_hat = window.cons.mean(axis=1)
    return alpha_hat, tau_hat


def build_scenarios(window: HistoryWindow) -> ScenarioSet:
    """One equiprobable scenario per window day, data carried verbatim."""
    n = window.n_days
    return ScenarioSet(
        avail=np.swapaxes(window.avail, 0, 1),
        cons=np.swapaxes(window.cons, 0, 1),
        pi=np.full(n, 1.0 / n),
    )


def expected_daily_demand(window: HistoryWindow) -> np.ndarray:
    """Mean total driving energy per day, per EV (kWh)."""
    return window.cons.sum(axis=2).mean(axis=1)


def estimate_uncertainty_set(window: HistoryWindow, k_offset: int = 0) -> UncertaintySet:
    """Full uncertainty description from one window.

    ``k_offset`` shifts the minimum-hours parameter for sensitivity
    studies; it is applied only as far as feasibility allows, i.e. the
    result is clamped to ``[0, sum_t a_hi]`` per EV.
    """
    k = estimate_k(window)
    a_lo, a_hi = estimate_bounds(window)
    k = np.clip(k + k_offset, 0, a_hi.sum(axis=1, dtype=np.int64))
    # Guaranteed by construction: each window day has at most sum(a_hi)
    # available hours, so the floored mean cannot exceed it either.
    assert np.all(a_hi.sum(axis=1) >= k)
    return UncertaintySet(k_min=k, a_lo=a_lo, a_hi=a_hi)
