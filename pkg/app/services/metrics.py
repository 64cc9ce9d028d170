"""Cost, curtailment and voltage-quality indices of a simulated day."""
import logging
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from app.services.arbitrage import Schedule, net_cost
from app.services.inverter_rules import VoltageRuleParams
from app.services.prosumer_model import BatterySpec, ScenarioSeries, TimeGrid, battery_power

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricsBundle:
    cost_wic: float
    cost_inv: float
    lcg_abs: Optional[float]
    lcg_pct: Optional[float]
    tce: float
    vci: Tuple[int, int, int, int]
    cvc: float
    null_action_cost: Optional[float] = None

    def __post_init__(self):
        if self.tce < 0 or self.cvc < 0 or min(self.vci) < 0:
            raise ValueError("curtailment and voltage indices must be nonnegative")

    @property
    def arbitrage_savings(self) -> Optional[float]:
        if self.null_action_cost is None:
            return None
        return self.null_action_cost - self.cost_wic

    def to_dict(self) -> dict:
        data = asdict(self)
        data["vci"] = list(self.vci)
        data["arbitrage_savings"] = self.arbitrage_savings
        return data


def cost_without_inverter_control(schedule: Schedule, series: ScenarioSeries, battery: BatterySpec,
                                  grid: TimeGrid) -> float:
    """Bill of the schedule as planned: net load d + y - r + battery_power(x)."""
    net = series.d + schedule.y - series.r + battery_power(schedule.x, battery, grid.h)
    return net_cost(net, series.prices, grid.h)


def cost_with_inverter_control(p_b: np.ndarray, p_curt: np.ndarray, y: np.ndarray,
                               series: ScenarioSeries, grid: TimeGrid) -> float:
    """Bill with the inner-step battery power and curtailment averaged over each outer step."""
    shape = (grid.N, grid.inner_per_outer)
    inner = np.asarray(p_b, dtype=float).reshape(shape) + np.asarray(p_curt, dtype=float).reshape(shape)
    net = series.d + np.asarray(y, dtype=float) - series.r + inner.mean(axis=1)
    return net_cost(net, series.prices, grid.h)


def lcg(cost_inv: float, cost_wic: float) -> Tuple[float, Optional[float]]:
    """Loss of consumer gain: absolute and as percent of |cost_wic| (None if that base is 0)."""
    absolute = cost_inv - cost_wic
    if cost_wic == 0:
        return absolute, (0.0 if absolute == 0 else None)
    return absolute, absolute / abs(cost_wic) * 100.0


def tce(p_curt: np.ndarray, h_fast: float) -> float:
    return float(np.sum(np.asarray(p_curt, dtype=float)) * h_fast)


def vci(u: np.ndarray, params: VoltageRuleParams) -> Tuple[int, int, int, int]:
    """Samples above u_max, above 1+delta, below 1-delta, below u_min."""
    u = np.asarray(u, dtype=float)
    low, high = params.band
    return (
        int(np.sum(u > params.u_max)),
        int(np.sum(u > high)),
        int(np.sum(u < low)),
        int(np.sum(u < params.u_min)),
    )


def cvc(u: np.ndarray, params: VoltageRuleParams) -> float:
    u = np.asarray(u, dtype=float)
    low, high = params.band
    return float(np.sum(np.maximum(u - high, 0.0)) + np.sum(np.maximum(low - u, 0.0)))


def voltage_indices(u: np.ndarray, params: VoltageRuleParams) -> Tuple[Tuple[int, int, int, int], float]:
    return vci(u, params), cvc(u, params)


def compute_metrics(day_ahead: Schedule, executed_y: np.ndarray, series: ScenarioSeries,
                    battery: BatterySpec, grid: TimeGrid, p_b: np.ndarray, p_curt: np.ndarray,
                    u: np.ndarray, params: VoltageRuleParams, with_control: bool = True,
                    null_cost: Optional[float] = None) -> MetricsBundle:
    cost_wic = cost_without_inverter_control(day_ahead, series, battery, grid)
    cost_inv = cost_with_inverter_control(p_b, p_curt, executed_y, series, grid)
    lcg_abs, lcg_pct = lcg(cost_inv, cost_wic) if with_control else (None, None)
    indices, correction = voltage_indices(u, params)
    return MetricsBundle(
        cost_wic=cost_wic,
        cost_inv=cost_inv,
        lcg_abs=lcg_abs,
        lcg_pct=lcg_pct,
        tce=tce(p_curt, grid.h_fast),
        vci=indices,
        cvc=correction,
        null_action_cost=null_cost,
    )
