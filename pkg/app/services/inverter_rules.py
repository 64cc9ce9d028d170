"""Voltage zones, inverter P/Q envelopes and minimum-curtailment dispatch.

Zones split the local voltage axis at u_min, 1-delta, 1+delta and u_max. Each
policy maps the zone (and, inside the droop zones, the voltage itself) to a
feasible active/reactive output range:

    PRC     actively pushes the voltage back toward nominal
    ANRC    only forbids outputs that would push it further away
    Hybrid  ANRC active-power rows with PRC reactive-power rows
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.config import settings
from app.errors import InverterDomainError
from app.services.lp_solver import StandardLP
from app.services.prosumer_model import BatterySpec, InverterSpec, battery_power_limits

logger = logging.getLogger(__name__)

_TOL = 1e-9


class VoltageRuleParams(BaseModel):
    u_min: float = Field(0.92, gt=0)
    u_max: float = Field(1.08, gt=0)
    delta_perm: float = Field(0.04, gt=0)

    class Config:
        frozen = True

    @model_validator(mode="after")
    def check_ordering(self):
        if not self.u_min < 1 - self.delta_perm < 1 + self.delta_perm < self.u_max:
            raise ValueError("voltage limits must satisfy u_min < 1-delta < 1+delta < u_max")
        return self

    @property
    def band(self) -> Tuple[float, float]:
        return 1.0 - self.delta_perm, 1.0 + self.delta_perm


class Zone(str, Enum):
    Z1 = "Z1"
    Z2 = "Z2"
    Z3 = "Z3"
    Z4 = "Z4"
    Z5 = "Z5"


class Policy(str, Enum):
    NONE = "none"
    PRC = "prc"
    ANRC = "anrc"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class Envelope:
    p_min: float
    p_max: float
    q_min: float
    q_max: float

    def __post_init__(self):
        if self.p_min > self.p_max + _TOL or self.q_min > self.q_max + _TOL:
            raise InverterDomainError(f"empty envelope P=[{self.p_min}, {self.p_max}] Q=[{self.q_min}, {self.q_max}]")

    def contains_p(self, p: float) -> bool:
        return self.p_min - _TOL <= p <= self.p_max + _TOL

    def contains_q(self, q: float) -> bool:
        return self.q_min - _TOL <= q <= self.q_max + _TOL


@dataclass(frozen=True)
class DispatchResult:
    p_curt: float
    p_b: float
    p_inv: float
    q_inv: float
    fallback_used: bool = False


def classify_zone(u: float, params: VoltageRuleParams) -> Zone:
    if not u > 0:
        raise InverterDomainError(f"voltage must be positive, got {u}")
    low, high = params.band
    if u < params.u_min:
        return Zone.Z1
    if u < low:
        return Zone.Z2
    if u <= high:
        return Zone.Z3
    if u <= params.u_max:
        return Zone.Z4
    return Zone.Z5


def _droop(u: float, params: VoltageRuleParams):
    low, high = params.band
    alpha2 = (u - low) / (params.u_min - low)
    beta2 = (params.u_min - u) / (params.u_min - low)
    alpha4 = (u - high) / (params.u_max - high)
    beta4 = (params.u_max - u) / (params.u_max - high)
    return alpha2, beta2, alpha4, beta4


def _p_rows(zone: Zone, reinforce: bool, u: float, params: VoltageRuleParams, p_min: float, p_max: float):
    alpha2, beta2, alpha4, beta4 = _droop(u, params)
    if zone == Zone.Z1:
        return (p_min, p_min) if reinforce else (p_min, 0.0)
    if zone == Zone.Z2:
        return (p_min, p_min * alpha2) if reinforce else (p_min, p_max * beta2)
    if zone == Zone.Z4:
        return (p_max * alpha4, p_max) if reinforce else (p_min * beta4, p_max)
    if zone == Zone.Z5:
        return (p_max, p_max) if reinforce else (0.0, p_max)
    return p_min, p_max


def _q_rows(zone: Zone, reinforce: bool, u: float, params: VoltageRuleParams, q_min: float, q_max: float):
    alpha2, beta2, alpha4, beta4 = _droop(u, params)
    if zone == Zone.Z1:
        return (q_max, q_max) if reinforce else (0.0, q_max)
    if zone == Zone.Z2:
        return (q_max * alpha2, q_max) if reinforce else (q_min * beta2, q_max)
    if zone == Zone.Z4:
        return (q_min, q_min * alpha4) if reinforce else (q_min, q_max * beta4)
    if zone == Zone.Z5:
        return (q_min, q_min) if reinforce else (q_min, 0.0)
    return q_min, q_max


def envelope(policy: Policy, u: float, params: VoltageRuleParams,
             p_min: float, p_max: float, q_min: float, q_max: float) -> Envelope:
    """Feasible inverter output box for ``policy`` at local voltage ``u``."""
    zone = classify_zone(u, params)
    if policy == Policy.NONE or zone == Zone.Z3:
        return Envelope(p_min, p_max, q_min, q_max)
    reinforce_p = policy == Policy.PRC
    reinforce_q = policy in (Policy.PRC, Policy.HYBRID)
    p_lo, p_hi = _p_rows(zone, reinforce_p, u, params, p_min, p_max)
    q_lo, q_hi = _q_rows(zone, reinforce_q, u, params, q_min, q_max)
    return Envelope(p_lo, p_hi, q_lo, q_hi)


def q_capability(p_inv: float, inv: InverterSpec, floor_ratio: Optional[float] = None) -> float:
    """Reactive headroom (kVAr, >= 0) of the inverter at active output p_inv.

    Above pf_wc*S_max the apparent-power circle binds; between the floor ratio and
    pf_wc the worst-case power-factor wedge binds; below the floor the wedge value
    at the floor is kept.
    """
    floor_ratio = settings.q_floor_ratio if floor_ratio is None else floor_ratio
    magnitude = abs(p_inv)
    if magnitude > inv.s_max + _TOL:
        raise InverterDomainError(f"|p_inv|={magnitude} exceeds S_max={inv.s_max}")
    ratio = min(magnitude / inv.s_max, 1.0)
    tan_phi = math.tan(math.acos(inv.pf_wc))
    if ratio > inv.pf_wc:
        return math.sqrt(max(inv.s_max ** 2 - magnitude ** 2, 0.0))
    if ratio >= floor_ratio:
        return magnitude * tan_phi
    return floor_ratio * inv.s_max * tan_phi


def capability_envelope(policy: Policy, u: float, params: VoltageRuleParams, zeta: float,
                        inv: InverterSpec, floor_ratio: Optional[float] = None) -> Envelope:
    """Envelope whose Q rating is the capability at the point of the P range nearest to zeta."""
    p_lo, p_hi = inv.p_bounds()
    p_range = envelope(policy, u, params, p_lo, p_hi, 0.0, 0.0)
    p_ref = min(max(zeta, p_range.p_min), p_range.p_max)
    q_max = q_capability(p_ref, inv, floor_ratio)
    return envelope(policy, u, params, p_lo, p_hi, -q_max, q_max)


def min_curtailment_dispatch(p_trgt: float, r: float, b_prev: float, battery: BatterySpec,
                             step: float) -> Optional[Tuple[float, float]]:
    """Battery power and curtailment reaching inverter output p_trgt with least curtailment.

    Returns (p_b, p_curt), or None when no battery power in the admissible range
    reaches the target with 0 <= p_curt <= r.
    """
    if r < 0:
        raise InverterDomainError(f"generation must be nonnegative, got {r}")
    lo, hi = battery_power_limits(b_prev, battery, step)
    # p_b = p_trgt + r - p_curt, so least curtailment means the largest admissible p_b
    p_b = min(hi, p_trgt + r)
    if p_b < max(lo, p_trgt) - _TOL:
        return None
    p_b = max(p_b, lo)
    p_curt = min(max(p_trgt + r - p_b, 0.0), r)
    return p_b, p_curt


def build_curtailment_lp(p_trgt: float, r: float, b_prev: float, battery: BatterySpec,
                         step: float) -> StandardLP:
    """The minimum-curtailment problem over [p_b, p_curt] in solver form."""
    lo, hi = battery_power_limits(b_prev, battery, step)
    return StandardLP(
        c=np.array([0.0, 1.0]),
        A=np.array([[1.0, 1.0], [-1.0, -1.0]]),
        b=np.array([p_trgt + r, -(p_trgt + r)]),
        lb=np.array([lo, 0.0]),
        ub=np.array([hi, r]),
    )


def _within_rating(p_b: float, p_curt: float, r: float, lo: float, hi: float, s_max: float):
    # Active power wins over reactive, but never beyond the apparent rating
    p_inv = p_b - r + p_curt
    if p_inv > s_max:
        excess = p_inv - s_max
        relief = min(excess, p_curt)
        p_curt -= relief
        p_b = max(lo, p_b - (excess - relief))
    elif p_inv < -s_max:
        deficit = -s_max - p_inv
        charge = min(deficit, hi - p_b)
        p_b += charge
        p_curt = min(r, p_curt + deficit - charge)
    return p_b, p_curt


def inverter_control_step(zeta: float, r: float, b_prev: float, env: Envelope, battery: BatterySpec,
                          inv: InverterSpec, step: float, floor_ratio: Optional[float] = None) -> DispatchResult:
    """Dispatch one inner step: keep the scheduled output if the envelope allows it,
    otherwise move to the nearest envelope bound with the least PV curtailment."""
    lo, hi = battery_power_limits(b_prev, battery, step)
    target: Optional[float] = None
    fallback = False

    if env.contains_p(zeta):
        p_b, p_curt = min(max(zeta + r, lo), hi), 0.0
        realized = p_b - r
        if not env.contains_p(realized):
            target = env.p_min if realized < env.p_min else env.p_max
    else:
        target = env.p_min if zeta < env.p_min else env.p_max

    if target is not None:
        dispatch = min_curtailment_dispatch(target, r, b_prev, battery, step)
        if dispatch is None:
            fallback = True
            p_b, p_curt = (hi, r) if target > 0 else (lo, 0.0)
        else:
            p_b, p_curt = dispatch

    p_b, p_curt = _within_rating(p_b, p_curt, r, lo, hi, inv.s_max)
    p_inv = p_b - r + p_curt

    if env.contains_q(0.0):
        q_target = 0.0
    else:
        q_target = env.q_min if env.q_min > 0.0 else env.q_max
    p_cap = min(abs(p_inv), inv.s_max)
    q_cap = min(math.sqrt(max(inv.s_max ** 2 - p_inv ** 2, 0.0)), q_capability(p_cap, inv, floor_ratio))
    q_inv = min(max(q_target, -q_cap), q_cap)

    return DispatchResult(p_curt=p_curt, p_b=p_b, p_inv=p_inv, q_inv=q_inv, fallback_used=fallback)
