"""Device parameters, time discretization and battery conversions.

Sign convention used everywhere: active power positive = consumption from the
grid (battery charging), reactive power positive = injection into the grid.
"""
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.errors import (
    BatteryDomainError,
    FlexibilityInfeasibleError,
    ModelValidationError,
    PriceConvexityError,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

_DOMAIN_TOL = 1e-9
_C_RATING = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*C\s*-\s*(\d+(?:\.\d+)?)\s*C\s*$", re.IGNORECASE)


class TimeGrid(BaseModel):
    """N outer steps of h hours, each split into inner_per_outer steps of h_fast hours."""
    N: int = Field(96, ge=1)
    h: float = Field(0.25, gt=0)
    inner_per_outer: int = Field(15, ge=1)

    class Config:
        frozen = True

    @property
    def h_fast(self) -> float:
        return self.h / self.inner_per_outer

    @property
    def total_minutes(self) -> int:
        return self.N * self.inner_per_outer

    @property
    def horizon_hours(self) -> float:
        return self.N * self.h

    def truncated(self, steps: int) -> "TimeGrid":
        return TimeGrid(N=steps, h=self.h, inner_per_outer=self.inner_per_outer)


def parse_c_rating(text: str) -> Tuple[float, float]:
    """'1C-0.5C' -> (1.0, 0.5): charge and discharge rates in capacities per hour."""
    match = _C_RATING.match(text or "")
    if not match:
        raise BatteryDomainError(f"Cannot parse C-rating '{text}', expected e.g. '1C-1C'")
    return float(match.group(1)), float(match.group(2))


class BatterySpec(BaseModel):
    b_min: float = Field(0.0, ge=0)
    b_max: float = Field(0.0, ge=0)
    b_0: float = 0.0
    delta_min: float = Field(0.0, le=0)
    delta_max: float = Field(0.0, ge=0)
    eta_ch: float = Field(1.0, gt=0, le=1)
    eta_dis: float = Field(1.0, gt=0, le=1)

    class Config:
        frozen = True

    @model_validator(mode="after")
    def check_charge(self):
        if self.b_min > self.b_max:
            raise ValueError(f"b_min {self.b_min} exceeds b_max {self.b_max}")
        if not (self.b_min - _DOMAIN_TOL <= self.b_0 <= self.b_max + _DOMAIN_TOL):
            raise ValueError(f"b_0 {self.b_0} outside [{self.b_min}, {self.b_max}]")
        return self

    @classmethod
    def from_c_rating(cls, capacity_kwh: float, rating: str, b_min: float = 0.0,
                      soc_0: float = 0.5, eta_ch: float = 1.0, eta_dis: float = 1.0) -> "BatterySpec":
        """Battery of ``capacity_kwh`` usable above ``b_min`` with ramps from a 'xC-yC' rating."""
        charge_rate, discharge_rate = parse_c_rating(rating)
        b_max = b_min + capacity_kwh
        return cls(
            b_min=b_min,
            b_max=b_max,
            b_0=b_min + soc_0 * capacity_kwh,
            delta_min=-discharge_rate * capacity_kwh,
            delta_max=charge_rate * capacity_kwh,
            eta_ch=eta_ch,
            eta_dis=eta_dis,
        )

    @classmethod
    def none(cls) -> "BatterySpec":
        return cls()

    @property
    def capacity(self) -> float:
        return self.b_max - self.b_min

    def x_bounds(self, dur: float) -> Tuple[float, float]:
        return self.delta_min * dur, self.delta_max * dur

    def with_charge(self, b: float) -> "BatterySpec":
        """Copy with b_0 = b; values within tolerance of the bounds are snapped onto them."""
        if not (self.b_min - 1e-6 <= b <= self.b_max + 1e-6):
            raise BatteryDomainError(f"charge {b} outside [{self.b_min}, {self.b_max}]")
        return self.model_copy(update={"b_0": float(np.clip(b, self.b_min, self.b_max))})


class InverterSpec(BaseModel):
    s_max: float = Field(..., gt=0)
    p_max: float = Field(..., gt=0)
    pf_wc: float = Field(0.9, gt=0, le=1)

    class Config:
        frozen = True

    @model_validator(mode="after")
    def check_rating(self):
        if self.p_max > self.s_max:
            raise ValueError(f"p_max {self.p_max} exceeds s_max {self.s_max}")
        return self

    @classmethod
    def from_kva(cls, kva: float, pf_wc: float = 0.9) -> "InverterSpec":
        # Active rating equal to apparent rating
        return cls(s_max=kva, p_max=kva, pf_wc=pf_wc)

    def p_bounds(self) -> Tuple[float, float]:
        return -self.p_max, self.p_max


def _as_series(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ModelValidationError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PriceSeries:
    p_b: np.ndarray
    p_s: np.ndarray

    def __post_init__(self):
        p_b = _as_series(self.p_b, "p_b")
        p_s = _as_series(self.p_s, "p_s")
        if p_b.size != p_s.size:
            raise ModelValidationError(f"p_b has {p_b.size} steps but p_s has {p_s.size}")
        if np.any(p_s < 0):
            raise PriceConvexityError("selling price must be nonnegative")
        bad = np.flatnonzero(p_s > p_b + 1e-12)
        if bad.size:
            raise PriceConvexityError(
                f"selling price exceeds buying price at step {int(bad[0])} (kappa must be <= 1)"
            )
        object.__setattr__(self, "p_b", p_b)
        object.__setattr__(self, "p_s", p_s)

    @property
    def N(self) -> int:
        return self.p_b.size

    @property
    def kappa(self) -> np.ndarray:
        return np.divide(self.p_s, self.p_b, out=np.ones_like(self.p_b), where=self.p_b > 0)

    def with_kappa(self, kappa: float) -> "PriceSeries":
        if not 0.0 <= kappa <= 1.0:
            raise PriceConvexityError(f"kappa {kappa} outside [0, 1]")
        return PriceSeries(self.p_b, kappa * self.p_b)

    def window(self, start: int) -> "PriceSeries":
        return PriceSeries(self.p_b[start:], self.p_s[start:])


@dataclass(frozen=True)
class ScenarioSeries:
    d: np.ndarray
    r: np.ndarray
    prices: PriceSeries

    def __post_init__(self):
        d = _as_series(self.d, "d")
        r = _as_series(self.r, "r")
        if d.size != r.size or d.size != self.prices.N:
            raise ModelValidationError(
                f"series lengths disagree: d={d.size}, r={r.size}, prices={self.prices.N}"
            )
        if np.any(d < 0) or np.any(r < 0):
            raise ModelValidationError("inelastic load and generation must be nonnegative")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "r", r)

    @property
    def N(self) -> int:
        return self.d.size

    @property
    def z(self) -> np.ndarray:
        return self.d - self.r

    def window(self, start: int) -> "ScenarioSeries":
        return ScenarioSeries(self.d[start:], self.r[start:], self.prices.window(start))

    def with_kappa(self, kappa: float) -> "ScenarioSeries":
        return replace(self, prices=self.prices.with_kappa(kappa))


def default_epsilon(K: float) -> float:
    return max(1e-6, 1e-4 * K)


@dataclass(frozen=True)
class FlexibilitySpec:
    """Per-step flexible load envelope and the cumulative energy target h*sum(y) = K +/- epsilon."""
    y_min: np.ndarray
    y_max: np.ndarray
    K: float
    epsilon: float
    y_ref: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        y_min = _as_series(self.y_min, "y_min")
        y_max = _as_series(self.y_max, "y_max")
        if y_min.size != y_max.size:
            raise FlexibilityInfeasibleError("y_min and y_max lengths differ")
        if np.any(y_min < 0) or np.any(y_min > y_max):
            raise FlexibilityInfeasibleError("flexibility envelope requires 0 <= y_min <= y_max")
        if self.K < 0 or self.epsilon < 0:
            raise FlexibilityInfeasibleError("K and epsilon must be nonnegative")
        y_ref = 0.5 * (y_min + y_max) if self.y_ref is None else _as_series(self.y_ref, "y_ref")
        if y_ref.size != y_min.size or np.any(y_ref < y_min - 1e-12) or np.any(y_ref > y_max + 1e-12):
            raise FlexibilityInfeasibleError("reference flexible load must lie inside the envelope")
        object.__setattr__(self, "y_min", y_min)
        object.__setattr__(self, "y_max", y_max)
        object.__setattr__(self, "y_ref", y_ref)

    @classmethod
    def none(cls, N: int) -> "FlexibilitySpec":
        return cls(np.zeros(N), np.zeros(N), 0.0, 0.0)

    @property
    def N(self) -> int:
        return self.y_min.size

    def check_feasible(self, h: float):
        low, high = h * self.y_min.sum(), h * self.y_max.sum()
        if low > self.K + self.epsilon + 1e-12 or high < self.K - self.epsilon - 1e-12:
            raise FlexibilityInfeasibleError(
                f"target K={self.K:.6g} kWh (+/- {self.epsilon:.3g}) unreachable: "
                f"envelope allows [{low:.6g}, {high:.6g}] kWh"
            )

    def window(self, start: int) -> "FlexibilitySpec":
        return FlexibilitySpec(self.y_min[start:], self.y_max[start:], self.K, self.epsilon,
                               self.y_ref[start:])

    def with_budget(self, K: float) -> "FlexibilitySpec":
        return replace(self, K=K)


def split_flexible_load(load: np.ndarray, pct: float, h: float,
                        epsilon: Optional[float] = None) -> Tuple[np.ndarray, FlexibilitySpec]:
    """Make ``pct`` of ``load`` flexible between 0 and twice its nominal value.

    Returns the inelastic remainder and the flexibility spec whose target K is the
    nominal flexible energy, so shifting never reduces total consumption.
    """
    if not 0.0 <= pct <= 1.0:
        raise FlexibilityInfeasibleError(f"flexible share {pct} outside [0, 1]")
    load = np.asarray(load, dtype=float)
    if np.any(load < 0):
        raise ModelValidationError("load must be nonnegative")
    y_ref = pct * load
    K = float(h * y_ref.sum())
    flex = FlexibilitySpec(
        y_min=np.zeros_like(load),
        y_max=2.0 * y_ref,
        K=K,
        epsilon=default_epsilon(K) if epsilon is None else epsilon,
        y_ref=y_ref,
    )
    return load - y_ref, flex


def _check_ramp(x: np.ndarray, spec: BatterySpec, dur: float):
    x_lo, x_hi = spec.x_bounds(dur)
    tol = _DOMAIN_TOL * max(1.0, abs(x_lo), abs(x_hi))
    if np.any(x < x_lo - tol) or np.any(x > x_hi + tol):
        raise BatteryDomainError(f"energy delta outside ramp range [{x_lo}, {x_hi}] kWh")


def battery_power(x: ArrayLike, spec: BatterySpec, dur: float) -> ArrayLike:
    """Grid-side power (kW) of an energy change x (kWh) over ``dur`` hours."""
    arr = np.asarray(x, dtype=float)
    _check_ramp(arr, spec, dur)
    power = np.maximum(arr, 0.0) / (dur * spec.eta_ch) - spec.eta_dis * np.maximum(-arr, 0.0) / dur
    return float(power) if power.ndim == 0 else power


def battery_energy_from_power(p: ArrayLike, spec: BatterySpec, dur: float) -> ArrayLike:
    """Inverse of battery_power: stored-energy change (kWh) from grid-side power (kW)."""
    arr = np.asarray(p, dtype=float)
    energy = np.where(arr > 0, arr * dur * spec.eta_ch, arr * dur / spec.eta_dis)
    return float(energy) if energy.ndim == 0 else energy


def battery_power_limits(b_prev: float, battery: BatterySpec, step: float) -> Tuple[float, float]:
    """Admissible battery power over one inner step of ``step`` hours starting from charge b_prev.

    Both the ramp limits and the capacity headroom are expressed as grid-side power,
    so the returned range maps onto charges inside [b_min, b_max].
    """
    b = min(max(b_prev, battery.b_min), battery.b_max)
    lo = max(battery.eta_dis * battery.delta_min, (battery.b_min - b) * battery.eta_dis / step)
    hi = min(battery.delta_max / battery.eta_ch, (battery.b_max - b) / (step * battery.eta_ch))
    return min(lo, 0.0), max(hi, 0.0)
