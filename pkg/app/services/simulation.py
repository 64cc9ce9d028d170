"""Closed-loop day simulation: receding-horizon arbitrage on the outer steps,
voltage-rule inverter dispatch on the inner steps, and parameter sweeps.
"""
import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from multiprocessing import Pool
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.config import settings
from app.errors import (
    DisparityError,
    FeederTopologyError,
    ModelValidationError,
    PowerFlowDivergedError,
    SimulationStepError,
)
from app.services.arbitrage import ArbitrageInputs, Schedule, null_action_cost, rebuild_for_step, solve_arbitrage
from app.services.inverter_rules import (
    Policy,
    VoltageRuleParams,
    capability_envelope,
    inverter_control_step,
)
from app.services.metrics import MetricsBundle, compute_metrics
from app.services.powerflow import FeederModel, NodalInjection, VoltageSolution, backward_forward_sweep
from app.services.prosumer_model import (
    BatterySpec,
    FlexibilitySpec,
    InverterSpec,
    ScenarioSeries,
    TimeGrid,
    battery_energy_from_power,
    battery_power,
    split_flexible_load,
)

logger = logging.getLogger(__name__)

_SOC_TOL = 1e-9


@dataclass(frozen=True)
class ProsumerSetup:
    series: ScenarioSeries
    battery: BatterySpec
    flex: FlexibilitySpec
    inverter: InverterSpec

    def background_load(self) -> np.ndarray:
        """Static consumption-positive profile used while another node is optimized."""
        return self.series.d + self.flex.y_ref - self.series.r


@dataclass(frozen=True)
class Scenario:
    feeder: FeederModel
    prosumers: Dict[int, ProsumerSetup]
    active_node: int
    policy: Policy = Policy.NONE
    rules: VoltageRuleParams = field(default_factory=VoltageRuleParams)
    grid: TimeGrid = field(default_factory=TimeGrid)
    rng_seed: int = 0
    q_floor_ratio: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy(self.policy))
        for node, setup in self.prosumers.items():
            self.feeder.index(node)
            if node == self.feeder.slack:
                raise FeederTopologyError(f"prosumer attached to slack node {node}")
            if setup.series.N != self.grid.N or setup.flex.N != self.grid.N:
                raise ModelValidationError(f"series of node {node} do not span {self.grid.N} steps")
        if self.active_node not in self.prosumers:
            raise ModelValidationError(f"active node {self.active_node} has no prosumer attached")

    @property
    def active(self) -> ProsumerSetup:
        return self.prosumers[self.active_node]

    def with_policy(self, policy: Union[Policy, str]) -> "Scenario":
        return replace(self, policy=Policy(policy))

    def with_active_node(self, node: int) -> "Scenario":
        return replace(self, active_node=int(node))

    def with_kappa(self, kappa: float) -> "Scenario":
        prosumers = {
            node: replace(setup, series=setup.series.with_kappa(kappa)) for node, setup in self.prosumers.items()
        }
        return replace(self, prosumers=prosumers)

    def with_inverter_kva(self, kva: float) -> "Scenario":
        setup = self.active
        inverter = InverterSpec.from_kva(kva, setup.inverter.pf_wc)
        return replace(self, prosumers={**self.prosumers, self.active_node: replace(setup, inverter=inverter)})

    def with_flex_pct(self, pct: float) -> "Scenario":
        prosumers = {}
        for node, setup in self.prosumers.items():
            load = setup.series.d + setup.flex.y_ref
            d, flex = split_flexible_load(load, pct, self.grid.h)
            prosumers[node] = replace(setup, series=replace(setup.series, d=d), flex=flex)
        return replace(self, prosumers=prosumers)


@dataclass(frozen=True)
class NodeTrace:
    u: np.ndarray
    p_inv: np.ndarray
    q_inv: np.ndarray
    p_curt: np.ndarray
    p_b: np.ndarray
    b: np.ndarray

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "minute": np.arange(self.u.size),
            "U": self.u,
            "p_inv": self.p_inv,
            "q_inv": self.q_inv,
            "p_curt": self.p_curt,
            "p_b": self.p_b,
            "b": self.b,
        })


@dataclass(frozen=True)
class SimulationResult:
    active_node: int
    policy: Policy
    grid: TimeGrid
    traces: Dict[int, NodeTrace]
    schedule_x: np.ndarray
    schedule_y: np.ndarray
    day_ahead: Schedule
    b_initial: float
    fallback: np.ndarray
    metrics: MetricsBundle
    timings: Dict[str, float]

    @property
    def active_trace(self) -> NodeTrace:
        return self.traces[self.active_node]

    @property
    def fallback_minutes(self) -> int:
        return int(np.sum(self.fallback))

    def node_trace(self, node: int) -> pd.DataFrame:
        return self.traces[node].frame()

    def schedule_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"step": np.arange(self.grid.N), "x": self.schedule_x, "y": self.schedule_y})


def _injection(scn: Scenario, background: Dict[int, np.ndarray], step: int,
               active_p: float, active_q: float) -> NodalInjection:
    p = np.zeros(len(scn.feeder.nodes))
    q = np.zeros(len(scn.feeder.nodes))
    for node, profile in background.items():
        p[scn.feeder.index(node)] = profile[step]
    p[scn.feeder.index(scn.active_node)] = active_p
    q[scn.feeder.index(scn.active_node)] = active_q
    return NodalInjection(p, q)


def _solve_network(scn: Scenario, inj: NodalInjection, step: int, minute: int) -> VoltageSolution:
    solution = backward_forward_sweep(scn.feeder, inj)
    if not solution.converged:
        cause = PowerFlowDivergedError(f"power flow diverged after {solution.iterations} iterations")
        raise SimulationStepError(str(cause), step, minute) from cause
    return solution


def _next_state_of_charge(b: float, p_b: float, battery: BatterySpec, dur: float, step: int, minute: int) -> float:
    """Advance the stored energy; rounding noise is clamped, a real excursion is an error."""
    b_next = b + battery_energy_from_power(p_b, battery, dur)
    if b_next < battery.b_min - _SOC_TOL or b_next > battery.b_max + _SOC_TOL:
        raise SimulationStepError(
            f"state of charge {b_next:.6f} kWh left [{battery.b_min:g}, {battery.b_max:g}] kWh", step, minute)
    return min(max(b_next, battery.b_min), battery.b_max)


def run_day(scn: Scenario) -> SimulationResult:
    """Simulate one day at the active node; background prosumers follow static profiles."""
    started = time.perf_counter()
    grid, setup = scn.grid, scn.active
    h, h_fast, inner = grid.h, grid.h_fast, grid.inner_per_outer
    battery, inverter, series = setup.battery, setup.inverter, setup.series
    base = ArbitrageInputs(grid=grid, battery=battery, flex=setup.flex, series=series)
    background = {
        node: other.background_load() for node, other in scn.prosumers.items() if node != scn.active_node
    }
    n_nodes, minutes = len(scn.feeder.nodes), grid.total_minutes
    logger.info(f"Simulating node {scn.active_node} under {scn.policy.value} policy ({grid.N} x {inner} steps)")

    u = np.zeros((minutes, n_nodes))
    p_b_trace, p_curt_trace = np.zeros(minutes), np.zeros(minutes)
    p_inv_trace, q_inv_trace, b_trace = np.zeros(minutes), np.zeros(minutes), np.zeros(minutes)
    fallback = np.zeros(minutes, dtype=bool)
    schedule_x, schedule_y = np.zeros(grid.N), np.zeros(grid.N)
    timings = {"arbitrage_total_s": 0.0, "powerflow_total_s": 0.0, "inner_loop_total_s": 0.0}

    b = battery.b_0
    flex_used = 0.0
    u_prev: Optional[float] = None
    day_ahead: Optional[Schedule] = None

    for i in range(grid.N):
        tick = time.perf_counter()
        try:
            inputs = base if i == 0 else rebuild_for_step(base, i, b, flex_used)
            schedule = solve_arbitrage(inputs)
        except DisparityError as exc:
            raise SimulationStepError(str(exc), i) from exc
        timings["arbitrage_total_s"] += time.perf_counter() - tick
        if day_ahead is None:
            day_ahead = schedule

        x_i, y_i, r_i, d_i = schedule.x[0], schedule.y[0], series.r[i], series.d[i]
        schedule_x[i], schedule_y[i] = x_i, y_i
        flex_used += h * y_i
        zeta = battery_power(x_i, battery, h) - r_i
        logger.debug(f"Step {i}: x={x_i:.4f} kWh y={y_i:.4f} kW zeta={zeta:.4f} kW b={b:.4f} kWh")

        loop_tick = time.perf_counter()
        for k in range(inner):
            minute = i * inner + k
            if u_prev is None:
                tick = time.perf_counter()
                solution = _solve_network(scn, _injection(scn, background, i, d_i + y_i + zeta, 0.0), i, minute)
                timings["powerflow_total_s"] += time.perf_counter() - tick
                u_prev = solution.magnitude_at(scn.active_node)

            try:
                env = capability_envelope(scn.policy, u_prev, scn.rules, zeta, inverter, scn.q_floor_ratio)
                dispatch = inverter_control_step(zeta, r_i, b, env, battery, inverter, h_fast, scn.q_floor_ratio)
            except DisparityError as exc:
                raise SimulationStepError(str(exc), i, minute) from exc
            b = _next_state_of_charge(b, dispatch.p_b, battery, h_fast, i, minute)

            tick = time.perf_counter()
            inj = _injection(scn, background, i, d_i + y_i + dispatch.p_inv, -dispatch.q_inv)
            solution = _solve_network(scn, inj, i, minute)
            timings["powerflow_total_s"] += time.perf_counter() - tick
            u[minute] = solution.magnitude
            u_prev = solution.magnitude_at(scn.active_node)

            p_b_trace[minute], p_curt_trace[minute] = dispatch.p_b, dispatch.p_curt
            p_inv_trace[minute], q_inv_trace[minute] = dispatch.p_inv, dispatch.q_inv
            b_trace[minute], fallback[minute] = b, dispatch.fallback_used
        timings["inner_loop_total_s"] += time.perf_counter() - loop_tick

    active_index = scn.feeder.index(scn.active_node)
    traces = {scn.active_node: NodeTrace(u[:, active_index], p_inv_trace, q_inv_trace, p_curt_trace, p_b_trace, b_trace)}
    for node, other in scn.prosumers.items():
        if node == scn.active_node:
            continue
        pv = np.repeat(other.series.r, inner)
        zeros = np.zeros(minutes)
        traces[node] = NodeTrace(u[:, scn.feeder.index(node)], -pv, zeros, zeros, zeros, zeros)

    metrics = compute_metrics(
        day_ahead=day_ahead,
        executed_y=schedule_y,
        series=series,
        battery=battery,
        grid=grid,
        p_b=p_b_trace,
        p_curt=p_curt_trace,
        u=u[:, active_index],
        params=scn.rules,
        with_control=scn.policy != Policy.NONE,
        null_cost=null_action_cost(base),
    )
    timings["wall_s"] = time.perf_counter() - started
    fallback_count = int(fallback.sum())
    if fallback_count:
        logger.warning(f"Node {scn.active_node}: curtailment fallback used in {fallback_count} minutes")
    logger.info(
        f"Node {scn.active_node} {scn.policy.value}: cost {metrics.cost_inv:.4f}, TCE {metrics.tce:.4f} kWh, "
        f"wall {timings['wall_s']:.2f}s"
    )
    return SimulationResult(
        active_node=scn.active_node,
        policy=scn.policy,
        grid=grid,
        traces=traces,
        schedule_x=schedule_x,
        schedule_y=schedule_y,
        day_ahead=day_ahead,
        b_initial=battery.b_0,
        fallback=fallback,
        metrics=metrics,
        timings=timings,
    )


class SweepParam(str, Enum):
    KAPPA = "kappa"
    INVERTER_KVA = "inverter_kva"
    FLEX_PCT = "flex_pct"
    NODE = "node"
    POLICY = "policy"


@dataclass(frozen=True)
class SweepSpec:
    param: SweepParam
    values: Sequence[Union[float, int, str]]

    def __post_init__(self):
        object.__setattr__(self, "param", SweepParam(self.param))
        if not self.values:
            raise ModelValidationError("sweep needs at least one value")
        if self.param == SweepParam.POLICY:
            values = [Policy(str(v).lower()) for v in self.values]
        elif self.param == SweepParam.NODE:
            values = sorted(int(v) for v in self.values)
        else:
            values = sorted(float(v) for v in self.values)
        object.__setattr__(self, "values", tuple(values))


@dataclass(frozen=True)
class SweepPoint:
    value: Union[float, int, str]
    result: Optional[SimulationResult] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.result is not None


def apply_sweep_value(base: Scenario, param: SweepParam, value) -> Scenario:
    if param == SweepParam.KAPPA:
        return base.with_kappa(float(value))
    if param == SweepParam.INVERTER_KVA:
        return base.with_inverter_kva(float(value))
    if param == SweepParam.FLEX_PCT:
        return base.with_flex_pct(float(value))
    if param == SweepParam.NODE:
        return base.with_active_node(int(value))
    return base.with_policy(value)


def _run_point(task) -> SweepPoint:
    base, param, value = task
    label = value.value if isinstance(value, Policy) else value
    try:
        return SweepPoint(value=label, result=run_day(apply_sweep_value(base, param, value)))
    except (DisparityError, ValidationError) as exc:
        logger.warning(f"Sweep point {param.value}={label} failed: {exc}")
        return SweepPoint(value=label, error=str(exc))


def run_sweep(base: Scenario, sweep: SweepSpec, workers: Optional[int] = None) -> List[SweepPoint]:
    """Run one simulation per sweep value; failed points carry their error instead of a result."""
    workers = settings.sweep_workers if workers is None else workers
    tasks = [(base, sweep.param, value) for value in sweep.values]
    logger.info(f"Sweeping {sweep.param.value} over {len(tasks)} values with {workers} worker(s)")
    if workers > 1 and len(tasks) > 1:
        with Pool(processes=min(workers, len(tasks))) as pool:
            return pool.map(_run_point, tasks)
    return [_run_point(task) for task in tasks]
