"""Shared data model for the EV-aggregator dispatch library.

Units: power in kW, energy in kWh, money in EUR, prices in EUR/kWh.
Every power-to-energy conversion goes through ``Horizon.period_hours``;
with the default one-hour period the numeric identity kW == kWh holds
for per-period quantities.

All types are immutable after construction (frozen dataclasses holding
read-only numpy arrays) and safe to share between concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

__all__ = [
    "Horizon",
    "EvParams",
    "FleetSpec",
    "AggregatorParams",
    "PriceSeries",
    "AvailabilityHistory",
    "UncertaintySet",
    "ModelKind",
    "DispatchSolution",
    "MetricsReport",
    "degradation_cost",
    "default_initial_energy",
    "validate_fleet",
    "kw_to_kwh",
    "kwh_to_kw",
]

#: Absolute tolerance used when asserting bookkeeping identities (EUR / kWh).
IDENTITY_TOL = 1e-6


def _frozen_array(values, dtype=float, ndim=None) -> np.ndarray:
    """Return a read-only float array, validating dimensionality."""
    arr = np.asarray(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected {ndim}-d array, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Horizon:
    """Optimization horizon: number of periods and the period length.

    The period length is restricted to whole-hour multiples so that the
    kW/kWh bookkeeping stays exact.
    """

    n_periods: int = 24
    period_hours: float = 1.0

    def __post_init__(self):
        if self.n_periods < 1:
            raise ValueError("n_periods must be >= 1")
        if self.period_hours <= 0 or self.period_hours != round(self.period_hours):
            raise ValueError("period_hours must be a positive whole number of hours")


def kw_to_kwh(power_kw, horizon: Horizon):
    """Energy moved over one period by a constant power."""
    return power_kw * horizon.period_hours


def kwh_to_kw(energy_kwh, horizon: Horizon):
    """Constant power that moves the given energy over one period."""
    return energy_kwh / horizon.period_hours


def default_initial_energy(e_min: float, e_max: float) -> float:
    """Mid-range initial state of charge: maximizes two-sided headroom."""
    return e_min + 0.5 * (e_max - e_min)


@dataclass(frozen=True)
class EvParams:
    """Technical parameters of a single EV.

    ``slope`` is the (negative) slope of the linear battery-life
    approximation used by the cycle-degradation cost; ``daily_demand``
    is the expected daily energy required for transportation in kWh.

    Construction never raises on value ranges: admissibility is checked
    by :func:`validate_fleet`, which reports all violations at once.
    """

    ev_id: str
    c_max: float  # max charging power, kW
    d_max: float  # max discharging power, kW
    e_max: float  # battery upper energy bound, kWh
    e_min: float  # battery lower energy bound, kWh
    eta: float  # one-way conversion efficiency, equal for charge/discharge
    batt_cost: float  # battery purchase cost per usable kWh, EUR/kWh
    slope: float  # battery-life slope (dimensionless, typically negative)
    daily_demand: float = 0.0  # expected daily driving energy, kWh
    e_init: Optional[float] = None  # kWh; defaults to mid-range

    def __post_init__(self):
        if self.e_init is None:
            object.__setattr__(
                self, "e_init", default_initial_energy(self.e_min, self.e_max)
            )

    @property
    def deg_coef(self) -> float:
        """EUR per kWh of chemical energy retrieved from the battery."""
        return abs(self.slope / 100.0) * self.batt_cost


@dataclass(frozen=True)
class FleetSpec:
    """An ordered, immutable collection of EVs."""

    evs: tuple

    def __post_init__(self):
        object.__setattr__(self, "evs", tuple(self.evs))
        ids = [ev.ev_id for ev in self.evs]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ev_id in fleet")

    def __len__(self) -> int:
        return len(self.evs)

    def __iter__(self):
        return iter(self.evs)

    def __getitem__(self, i) -> EvParams:
        return self.evs[i]

    def array(self, name: str) -> np.ndarray:
        """Per-EV parameter values as a float array, in fleet order."""
        return np.array([getattr(ev, name) for ev in self.evs], dtype=float)


@dataclass(frozen=True)
class AggregatorParams:
    """Feeder capacity and the two deviation penalty prices.

    ``pen_balance`` penalizes violations of the battery energy balance
    and ``pen_sale`` penalizes shortfalls on committed sales; the
    balance penalty must dominate.
    """

    feeder_cap: float  # kW
    pen_balance: float  # EUR/kWh
    pen_sale: float  # EUR/kWh

    def __post_init__(self):
        if self.feeder_cap <= 0:
            raise ValueError("feeder_cap must be > 0")
        if not (self.pen_balance > self.pen_sale > 0):
            raise ValueError("penalties must satisfy pen_balance > pen_sale > 0")


@dataclass(frozen=True)
class PriceSeries:
    """Day-ahead electricity prices, one entry per period, EUR/kWh.

    Strictly positive prices are required: together with the round-trip
    efficiency loss and the cycle-degradation cost they guarantee that
    optimal schedules never charge and discharge simultaneously, so no
    binary variables are needed for that purpose. Non-positive input is
    rejected rather than silently admitting such schedules.
    """

    eur_per_kwh: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.eur_per_kwh, ndim=1)
        if arr.size == 0:
            raise ValueError("price series is empty")
        if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
            bad = int(np.argmin(arr))
            raise ValueError(
                f"prices must be strictly positive and finite; "
                f"got {arr[bad]} EUR/kWh at period {bad}"
            )
        object.__setattr__(self, "eur_per_kwh", arr)

    @property
    def n_periods(self) -> int:
        return self.eur_per_kwh.size


@dataclass(frozen=True)
class AvailabilityHistory:
    """Historical plug-in status and driving consumption per EV.

    ``avail[v, d, t]`` is 1 when EV ``v`` was plugged in during hour
    ``t`` of past day ``d`` and 0 while driving; ``cons[v, d, t]`` is
    the driving energy in kWh. Consumption can only occur while
    driving, which is enforced at construction. Day indices are
    chronological, so "same weekday one week earlier" is ``d - 7``.
    """

    avail: np.ndarray  # (n_evs, n_days, n_periods), values in {0, 1}
    cons: np.ndarray  # (n_evs, n_days, n_periods), kWh >= 0

    def __post_init__(self):
        avail = _frozen_array(self.avail, dtype=np.int8, ndim=3)
        cons = _frozen_array(self.cons, ndim=3)
        if avail.shape != cons.shape:
            raise ValueError(
                f"avail shape {avail.shape} != cons shape {cons.shape}"
            )
        if not np.isin(avail, (0, 1)).all():
            raise ValueError("availability entries must be 0 or 1")
        if np.any(cons < 0):
            raise ValueError("consumption must be non-negative")
        bad = (cons > 0) & (avail == 1)
        if bad.any():
            v, d, t = (int(i[0]) for i in np.nonzero(bad))
            raise ValueError(
                f"consumption while plugged in: ev {v}, day {d}, hour {t} "
                f"has cons={cons[v, d, t]} with avail=1"
            )
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
class UncertaintySet:
    """Per-EV availability uncertainty description.

    For EV ``v``: at least ``k_min[v]`` available hours over the
    horizon, with hard per-hour bounds ``a_lo[v, t] <= a_hi[v, t]``
    (both binary). Hours with ``a_lo == a_hi`` are known; hours with
    ``a_lo = 0 < a_hi = 1`` are free. Requires ``sum_t a_hi >= k_min``
    so the all-upper-bound profile is always feasible.
    """

    k_min: np.ndarray  # (n_evs,) integers
    a_lo: np.ndarray  # (n_evs, n_periods), binary
    a_hi: np.ndarray  # (n_evs, n_periods), binary

    def __post_init__(self):
        k = _frozen_array(self.k_min, dtype=np.int64, ndim=1)
        lo = _frozen_array(self.a_lo, dtype=np.int8, ndim=2)
        hi = _frozen_array(self.a_hi, dtype=np.int8, ndim=2)
        if lo.shape != hi.shape or lo.shape[0] != k.size:
            raise ValueError("inconsistent uncertainty-set shapes")
        if not (np.isin(lo, (0, 1)).all() and np.isin(hi, (0, 1)).all()):
            raise ValueError("availability bounds must be binary")
        if np.any(lo > hi):
            v, t = (int(i[0]) for i in np.nonzero(lo > hi))
            raise ValueError(f"a_lo > a_hi for ev {v} at hour {t}")
        n_periods = lo.shape[1]
        if np.any(k < 0) or np.any(k > n_periods):
            raise ValueError("k_min must lie in [0, n_periods]")
        short = hi.sum(axis=1) < k
        if short.any():
            v = int(np.nonzero(short)[0][0])
            raise ValueError(
                f"ev {v}: sum of upper availability bounds "
                f"{int(hi[v].sum())} < k_min {int(k[v])} (no feasible profile)"
            )
        object.__setattr__(self, "k_min", k)
        object.__setattr__(self, "a_lo", lo)
        object.__setattr__(self, "a_hi", hi)

    @property
    def n_evs(self) -> int:
        return self.k_min.size

    @property
    def n_periods(self) -> int:
        return self.a_lo.shape[1]


class ModelKind(str, Enum):
    DETERMINISTIC = "deterministic"
    STOCHASTIC = "stochastic"
    ROBUST = "robust"


@dataclass(frozen=True)
class DispatchSolution:
    """Decoded optimal dispatch of one model on one day.

    ``p`` is the aggregator's market position per period (kW, positive
    = buy). Schedule arrays are (n_evs, n_periods) for deterministic
    and robust solutions and (n_scenarios, n_evs, n_periods) for
    stochastic ones. Robust solutions additionally carry the chosen
    worst-case availability ``alpha``, the transport-energy placement
    ``tau``, the availability-gated powers ``zc``/``zd`` and the
    multipliers certifying both worst-case availability subproblems.
    """

    model_kind: ModelKind
    p: np.ndarray  # (n_periods,), kW
    c: np.ndarray  # charging, kW
    d: np.ndarray  # discharging, kW
    e: np.ndarray  # stored energy at end of period, kWh
    s: np.ndarray  # balance slack, kWh
    cdeg: np.ndarray  # degradation cost, EUR
    objective: float
    pi: Optional[np.ndarray] = None  # scenario probabilities (stochastic)
    tau: Optional[np.ndarray] = None  # (n_evs, n_periods), kWh (robust)
    alpha: Optional[np.ndarray] = None  # binary availability (robust)
    zc: Optional[np.ndarray] = None  # alpha-gated charging, kW (robust)
    zd: Optional[np.ndarray] = None  # alpha-gated discharging, kW (robust)
    duals_drain: Optional[dict] = None  # {"zeta": (V,), "beta_lo"/"beta_hi": (V,T)}
    duals_interact: Optional[dict] = None  # same layout
    solver_status: str = "optimal"
    mip_gap: float = 0.0


@dataclass(frozen=True)
class MetricsReport:
    """Day-ahead and ex-post metrics for one model (one day or a sum).

    Monetary fields in EUR; energy fields in MWh. The accounting
    identity ``tc_da == c_da + d_da - r_da`` is asserted on
    construction to one micro-euro.
    """

    tc_da: float  # total day-ahead cost
    c_da: float  # day-ahead purchase cost
    d_da: float  # battery degradation cost
    r_da: float  # day-ahead sale revenue
    e_bought: float  # MWh
    e_sold: float  # MWh
    s_fp: float  # ex-post battery-balance deviations, MWh
    e_minus_fp: float  # ex-post shortfall on committed sales, MWh
    solve_time: float = 0.0  # seconds

    def __post_init__(self):
        gap = abs(self.tc_da - (self.c_da + self.d_da - self.r_da))
        if not gap <= IDENTITY_TOL:
            raise ValueError(
                f"metrics identity violated: tc={self.tc_da} vs "
                f"c+d-r={self.c_da + self.d_da - self.r_da} (gap {gap})"
            )


def degradation_cost(ev: EvParams, d_kw: float, tau_kwh: float) -> float:
    """Cycle-degradation cost of one period, EUR.

    Proportional to the chemical energy retrieved from the battery:
    the grid-side discharge divided by the efficiency plus the energy
    consumed while driving. Assumes one-hour periods, matching the
    horizon default.
    """
    if d_kw < 0 or tau_kwh < 0:
        raise ValueError("discharge power and driving energy must be >= 0")
    return ev.deg_coef * (d_kw / ev.eta + tau_kwh)


def validate_fleet(fleet: FleetSpec, horizon: Horizon) -> list:
    """Collect all admissibility violations of a fleet; empty == admissible.

    Diagnostics, not exceptions: every violated invariant is reported,
    one message per violation.
    """
    diags = []
    for ev in fleet:
        where = f"ev {ev.ev_id}:"
        if not (0 < ev.e_min < ev.e_max):
            diags.append(f"{where} requires 0 < e_min < e_max, got "
                         f"e_min={ev.e_min}, e_max={ev.e_max}")
        if ev.e_init < ev.e_min:
            diags.append(f"{where} e_init below e_min ({ev.e_init} < {ev.e_min})")
        if ev.e_init > ev.e_max:
            diags.append(f"{where} e_init above e_max ({ev.e_init} > {ev.e_max})")
        if not (0 < ev.eta <= 1):
            diags.append(f"{where} eta must lie in (0, 1], got {ev.eta}")
        if ev.c_max < 0 or ev.d_max < 0:
            diags.append(f"{where} charge/discharge limits must be >= 0")
        if ev.batt_cost < 0:
            diags.append(f"{where} batt_cost must be >= 0")
        if ev.daily_demand < 0:
            diags.append(f"{where} daily_demand must be >= 0")
        else:
            ceiling = (ev.e_max - ev.e_min) * horizon.n_periods
            if ev.daily_demand > ceiling:
                diags.append(
                    f"{where} demand exceeds {ceiling:g} kWh ceiling "
                    f"(daily_demand={ev.daily_demand:g})"
                )
    return diags
