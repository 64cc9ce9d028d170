"""Slow-timescale arbitrage LP: battery energy deltas and flexible load over the horizon.

The piecewise-linear cost of a step, h*[net]^+ p_b - h*[net]^- p_s with
net = z + y + battery_power(x), is the maximum of four affine pieces (buy/sell
crossed with charge/discharge) as long as 0 <= p_s <= p_b. The LP minimizes the
sum of per-step epigraph variables t bounded below by those pieces.

Variable vector is [x (N); y (N); t (N)]. Row layout of A:
    0  .. N-1    segment 1  (buy, charging)
    N  .. 2N-1   segment 2  (sell, discharging)
    2N .. 3N-1   segment 3  (buy, discharging)
    3N .. 4N-1   segment 4  (sell, charging)
    4N .. 5N-1   running charge <= b_max
    5N .. 6N-1   running charge >= b_min
    6N, 6N+1     cumulative flexible energy <= K+eps, >= K-eps
"""
import logging
from dataclasses import dataclass

import numpy as np

from app.errors import ArbitrageInfeasibleError, LPDimensionError
from app.services.lp_solver import LPStatus, StandardLP, solve_lp
from app.services.prosumer_model import (
    BatterySpec,
    FlexibilitySpec,
    PriceSeries,
    ScenarioSeries,
    TimeGrid,
    battery_power,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArbitrageInputs:
    grid: TimeGrid
    battery: BatterySpec
    flex: FlexibilitySpec
    series: ScenarioSeries

    def __post_init__(self):
        if self.series.N != self.grid.N or self.flex.N != self.grid.N:
            raise LPDimensionError(
                f"horizon mismatch: grid N={self.grid.N}, series {self.series.N}, flexibility {self.flex.N}"
            )


@dataclass(frozen=True)
class Schedule:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    objective: float

    @property
    def N(self) -> int:
        return self.x.size


def net_cost(net: np.ndarray, prices: PriceSeries, h: float) -> float:
    """h * sum([net]^+ p_b - [net]^- p_s) for a consumption-positive net load (kW)."""
    net = np.asarray(net, dtype=float)
    return float(h * np.sum(np.maximum(net, 0.0) * prices.p_b - np.maximum(-net, 0.0) * prices.p_s))


def epigraph_bound(inp: ArbitrageInputs) -> float:
    """Magnitude M of the epigraph variable bounds, derived from the scenario's scale."""
    N, h = inp.grid.N, inp.grid.h
    battery = inp.battery
    ramp = max(abs(battery.delta_min), battery.delta_max) / min(battery.eta_ch, battery.eta_dis)
    scale = np.max(np.abs(inp.series.z)) + np.max(inp.flex.y_max) + ramp
    M = 10.0 * h * N * np.max(inp.series.prices.p_b) * scale
    return float(max(M, 1.0))


def _segment_coefficients(inp: ArbitrageInputs):
    p_b, p_s = inp.series.prices.p_b, inp.series.prices.p_s
    eta_ch, eta_dis = inp.battery.eta_ch, inp.battery.eta_dis
    x_coef = np.vstack([p_b / eta_ch, p_s * eta_dis, p_b * eta_dis, p_s / eta_ch])
    price = np.vstack([p_b, p_s, p_b, p_s])
    return x_coef, price


def segment_values(inp: ArbitrageInputs, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """The four affine cost pieces of every step at (x, y), shape (4, N)."""
    x_coef, price = _segment_coefficients(inp)
    h = inp.grid.h
    return x_coef * np.asarray(x, dtype=float) + h * price * (np.asarray(y, dtype=float) + inp.series.z)


def build_arbitrage_lp(inp: ArbitrageInputs) -> StandardLP:
    N, h = inp.grid.N, inp.grid.h
    inp.flex.check_feasible(h)
    battery, flex, z = inp.battery, inp.flex, inp.series.z
    x_coef, price = _segment_coefficients(inp)

    A = np.zeros((6 * N + 2, 3 * N))
    b = np.zeros(6 * N + 2)
    steps = np.arange(N)
    for seg in range(4):
        rows = seg * N + steps
        A[rows, steps] = x_coef[seg]
        A[rows, N + steps] = h * price[seg]
        A[rows, 2 * N + steps] = -1.0
        b[rows] = -h * z * price[seg]

    lower_ones = np.tril(np.ones((N, N)))
    A[4 * N:5 * N, :N] = lower_ones
    b[4 * N:5 * N] = battery.b_max - battery.b_0
    A[5 * N:6 * N, :N] = -lower_ones
    b[5 * N:6 * N] = battery.b_0 - battery.b_min

    A[6 * N, N:2 * N] = h
    b[6 * N] = flex.K + flex.epsilon
    A[6 * N + 1, N:2 * N] = -h
    b[6 * N + 1] = -flex.K + flex.epsilon

    x_lo, x_hi = battery.x_bounds(h)
    M = epigraph_bound(inp)
    lb = np.concatenate([np.full(N, x_lo), flex.y_min, np.full(N, -M)])
    ub = np.concatenate([np.full(N, x_hi), flex.y_max, np.full(N, M)])
    c = np.concatenate([np.zeros(2 * N), np.ones(N)])
    return StandardLP(c=c, A=A, b=b, lb=lb, ub=ub)


def _infeasible_family(inp: ArbitrageInputs) -> str:
    battery = inp.battery
    if not battery.b_min <= battery.b_0 <= battery.b_max:
        return "battery charge bounds"
    h = inp.grid.h
    low, high = h * inp.flex.y_min.sum(), h * inp.flex.y_max.sum()
    if low > inp.flex.K + inp.flex.epsilon or high < inp.flex.K - inp.flex.epsilon:
        return "cumulative flexibility"
    return "epigraph bounds"


def solve_arbitrage(inp: ArbitrageInputs) -> Schedule:
    lp = build_arbitrage_lp(inp)
    solution = solve_lp(lp)
    if solution.status != LPStatus.OPTIMAL:
        raise ArbitrageInfeasibleError(
            f"arbitrage LP over {inp.grid.N} steps is {solution.status.value}", _infeasible_family(inp)
        )

    N = inp.grid.N
    x = solution.x[:N].copy()
    y = solution.x[N:2 * N].copy()
    # t is tight at any optimum; take the exact segment maximum to drop solver round-off
    t = segment_values(inp, x, y).max(axis=0)
    logger.debug(
        f"Arbitrage LP {lp.m}x{lp.n} solved in {solution.iterations} pivots, objective {t.sum():.6f}"
    )
    return Schedule(x=x, y=y, t=t, objective=float(t.sum()))


def evaluate_cost(schedule: Schedule, inp: ArbitrageInputs) -> float:
    """Direct piecewise cost of a schedule, independent of the LP."""
    h = inp.grid.h
    net = inp.series.z + schedule.y + battery_power(schedule.x, inp.battery, h)
    return net_cost(net, inp.series.prices, h)


def null_action_cost(inp: ArbitrageInputs) -> float:
    """Cost with an idle battery and the flexible load at its reference profile."""
    return net_cost(inp.series.z + inp.flex.y_ref, inp.series.prices, inp.grid.h)


def rebuild_for_step(base: ArbitrageInputs, step: int, b_now: float, flex_used: float) -> ArbitrageInputs:
    """Inputs for the remaining horizon step..N-1 from the realized state.

    b_now is the charge at the start of ``step``; flex_used is the flexible energy
    (kWh) already consumed. The remaining target is clamped into what the
    remaining envelope can still deliver.
    """
    if not 0 <= step < base.grid.N:
        raise LPDimensionError(f"step {step} outside horizon of {base.grid.N}")
    h = base.grid.h
    battery = base.battery.with_charge(float(np.clip(b_now, base.battery.b_min, base.battery.b_max)))
    flex = base.flex.window(step)
    eps = flex.epsilon
    low, high = max(h * flex.y_min.sum() - eps, 0.0), h * flex.y_max.sum() + eps
    remaining = base.flex.K - flex_used
    if not low <= remaining <= high:
        logger.debug(f"Step {step}: remaining flexible energy {remaining:.6f} clamped into [{low:.6f}, {high:.6f}]")
        remaining = min(max(remaining, low), high)
    return ArbitrageInputs(
        grid=base.grid.truncated(base.grid.N - step),
        battery=battery,
        flex=flex.with_budget(remaining),
        series=base.series.window(step),
    )
