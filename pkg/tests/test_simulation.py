import numpy as np
import pytest

from app.errors import FeederTopologyError, ModelValidationError, SimulationStepError
from app.services.inverter_rules import Policy, VoltageRuleParams
from app.services.powerflow import four_bus_feeder
from app.services.prosumer_model import (
    BatterySpec,
    FlexibilitySpec,
    InverterSpec,
    PriceSeries,
    ScenarioSeries,
    TimeGrid,
    battery_energy_from_power,
)
from app.services.simulation import (
    ProsumerSetup,
    Scenario,
    SweepParam,
    SweepSpec,
    run_day,
    run_sweep,
)


def cost_tolerance(result):
    return 1e-5 * (1.0 + abs(result.metrics.cost_wic))


def test_idle_feeder_stays_at_slack_voltage(small_grid):
    N = small_grid.N
    setup = ProsumerSetup(
        series=ScenarioSeries(np.zeros(N), np.zeros(N), PriceSeries(np.full(N, 10.0), np.full(N, 5.0))),
        battery=BatterySpec.none(),
        flex=FlexibilitySpec.none(N),
        inverter=InverterSpec.from_kva(3.0),
    )
    scenario = Scenario(
        feeder=four_bus_feeder(v_base=230.0, s_base=10.0, slack_voltage=1.02),
        prosumers={2: setup, 3: setup, 4: setup},
        active_node=4,
        policy=Policy.PRC,
        grid=small_grid,
    )
    result = run_day(scenario)
    trace = result.active_trace
    for column in (trace.p_inv, trace.q_inv, trace.p_curt, trace.p_b):
        assert np.all(column == 0.0)
    assert trace.u == pytest.approx(np.full(small_grid.total_minutes, 1.02), abs=1e-12)
    assert result.metrics.cost_inv == 0.0
    assert result.metrics.tce == 0.0


def test_trace_shapes_and_battery_bookkeeping(make_scenario):
    result = run_day(make_scenario(policy="prc", node=4))
    minutes = result.grid.total_minutes
    trace = result.active_trace
    assert trace.u.shape == (minutes,)
    assert set(result.traces) == {2, 3, 4}
    frame = result.node_trace(4)
    assert list(frame.columns) == ["minute", "U", "p_inv", "q_inv", "p_curt", "p_b", "b"]
    assert len(frame) == minutes

    battery = make_scenario().active.battery
    stored = np.sum(battery_energy_from_power(trace.p_b, battery, result.grid.h_fast))
    assert stored == pytest.approx(trace.b[-1] - result.b_initial, abs=1e-9)
    assert np.all(trace.b >= battery.b_min - 1e-9)
    assert np.all(trace.b <= battery.b_max + 1e-9)
    assert np.all(trace.p_inv == trace.p_b - np.repeat(make_scenario().active.series.r, 4) + trace.p_curt)


def test_executed_flexible_energy_meets_target(make_scenario):
    scenario = make_scenario(policy="prc", node=4)
    result = run_day(scenario)
    flex = scenario.active.flex
    energy = scenario.grid.h * result.schedule_y.sum()
    assert flex.K - flex.epsilon - 1e-7 <= energy <= flex.K + flex.epsilon + 1e-7


def test_runs_are_deterministic(make_scenario):
    first = run_day(make_scenario(policy="anrc", node=4))
    second = run_day(make_scenario(policy="anrc", node=4))
    for name in ("u", "p_inv", "q_inv", "p_curt", "p_b", "b"):
        assert np.array_equal(getattr(first.active_trace, name), getattr(second.active_trace, name))
    assert first.metrics == second.metrics


def test_uncontrolled_run_reports_no_consumer_loss(make_scenario):
    result = run_day(make_scenario(policy="none", node=4))
    assert result.metrics.lcg_abs is None
    assert result.metrics.lcg_pct is None
    assert result.metrics.tce == 0.0
    assert result.metrics.cost_inv == pytest.approx(result.metrics.cost_wic, abs=cost_tolerance(result))
    assert result.metrics.arbitrage_savings > 0


def test_anrc_is_neutral_inside_permitted_band(make_scenario):
    uncontrolled = run_day(make_scenario(policy="none", node=4, pv_kwp=1.0))
    anrc = run_day(make_scenario(policy="anrc", node=4, pv_kwp=1.0))
    assert uncontrolled.metrics.vci == (0, 0, 0, 0)
    for name in ("u", "p_inv", "q_inv", "p_curt", "p_b"):
        assert np.array_equal(getattr(uncontrolled.active_trace, name), getattr(anrc.active_trace, name))


def test_losses_grow_with_distance_from_substation(make_scenario):
    results = {node: run_day(make_scenario(policy="prc", node=node)) for node in (2, 3, 4)}
    losses = {node: result.metrics.lcg_abs for node, result in results.items()}
    assert abs(losses[2]) <= cost_tolerance(results[2])
    assert losses[3] >= losses[2] - cost_tolerance(results[3])
    assert losses[4] >= losses[3]
    assert losses[4] > 0
    assert results[2].metrics.tce == pytest.approx(0.0, abs=1e-9)
    for result in results.values():
        assert result.metrics.lcg_abs >= -cost_tolerance(result)


def test_reinforcing_rules_curtail_more_than_non_reinforcing(make_scenario):
    prc = run_day(make_scenario(policy="prc", node=4))
    anrc = run_day(make_scenario(policy="anrc", node=4))
    assert prc.metrics.tce > anrc.metrics.tce >= 0.0


def test_hybrid_balances_curtailment_and_voltage(make_scenario):
    no_battery = dict(node=4, battery=BatterySpec.none())
    uncontrolled = run_day(make_scenario(policy="none", **no_battery))
    prc = run_day(make_scenario(policy="prc", **no_battery))
    hybrid = run_day(make_scenario(policy="hybrid", **no_battery))
    assert uncontrolled.metrics.cvc > 0
    assert hybrid.metrics.cvc <= uncontrolled.metrics.cvc
    assert hybrid.metrics.tce <= prc.metrics.tce
    assert hybrid.metrics.lcg_abs <= prc.metrics.lcg_abs


def test_scenario_validation(make_scenario, small_grid):
    scenario = make_scenario()
    with pytest.raises(ModelValidationError):
        scenario.with_active_node(3).with_active_node(7)
    setup = scenario.active
    with pytest.raises(FeederTopologyError):
        Scenario(feeder=scenario.feeder, prosumers={1: setup}, active_node=1, grid=small_grid)
    with pytest.raises(ModelValidationError):
        Scenario(feeder=scenario.feeder, prosumers={4: setup}, active_node=4, grid=TimeGrid(N=12, h=2.0))


def test_kappa_sweep_cost_never_increases(make_scenario):
    points = run_sweep(make_scenario(policy="none"), SweepSpec(SweepParam.KAPPA, ["1.0", "0.1", "0.5"]))
    assert [p.value for p in points] == [0.1, 0.5, 1.0]
    costs = [p.result.metrics.cost_inv for p in points]
    assert costs[0] >= costs[1] - 1e-6 >= costs[2] - 2e-6


def test_larger_inverter_curtails_less(make_scenario):
    points = run_sweep(make_scenario(policy="anrc", node=4), SweepSpec(SweepParam.INVERTER_KVA, [1, 1.25, 2, 3]))
    curtailed = [p.result.metrics.tce for p in points]
    assert all(a >= b for a, b in zip(curtailed, curtailed[1:]))


def test_failed_sweep_point_does_not_stop_the_sweep(make_scenario):
    points = run_sweep(make_scenario(policy="anrc", node=4), SweepSpec(SweepParam.INVERTER_KVA, [0, 2]))
    assert not points[0].ok and points[0].error
    assert points[1].ok


def test_node_sweep_in_worker_processes_matches_sequential(make_scenario):
    spec = SweepSpec(SweepParam.NODE, [4, 2])
    sequential = run_sweep(make_scenario(policy="prc"), spec, workers=1)
    parallel = run_sweep(make_scenario(policy="prc"), spec, workers=2)
    assert [p.value for p in parallel] == [2, 4]
    for a, b in zip(sequential, parallel):
        assert a.result.metrics == b.result.metrics


def test_policy_sweep_keeps_given_order(make_scenario):
    spec = SweepSpec(SweepParam.POLICY, ["PRC", "none"])
    assert spec.values == (Policy.PRC, Policy.NONE)
    with pytest.raises(ModelValidationError):
        SweepSpec(SweepParam.KAPPA, [])


def test_rules_can_be_tightened(make_scenario):
    scenario = make_scenario(policy="anrc", node=4)
    strict = Scenario(scenario.feeder, scenario.prosumers, 4, Policy.ANRC,
                      VoltageRuleParams(u_min=0.95, u_max=1.05, delta_perm=0.02), scenario.grid)
    assert run_day(strict).metrics.tce >= run_day(scenario).metrics.tce


def test_state_of_charge_excursion_stops_the_run(make_scenario, monkeypatch):
    monkeypatch.setattr("app.services.simulation.battery_energy_from_power", lambda p, spec, dur: 5.0)
    with pytest.raises(SimulationStepError) as info:
        run_day(make_scenario(policy="prc", node=4))
    assert info.value.step == 0
    assert info.value.minute == 0
    assert "state of charge" in str(info.value)


def test_state_of_charge_rounding_is_clamped(make_scenario, monkeypatch):
    full = BatterySpec.from_c_rating(2.0, "0.5C-0.5C", soc_0=1.0)
    monkeypatch.setattr("app.services.simulation.battery_energy_from_power",
                        lambda p, spec, dur: battery_energy_from_power(p, spec, dur) + 5e-10)
    trace = run_day(make_scenario(policy="none", node=4, battery=full)).active_trace
    assert trace.b.max() <= full.b_max


@pytest.mark.parametrize("seed", range(20))
def test_random_days_respect_device_limits(seed, make_scenario):
    rng = np.random.default_rng(seed)
    battery = BatterySpec.from_c_rating(2.0, "0.5C-0.5C", soc_0=rng.uniform(0.0, 1.0),
                                        eta_ch=rng.uniform(0.9, 1.0), eta_dis=rng.uniform(0.9, 1.0))
    scenario = make_scenario(
        policy=str(rng.choice(["none", "prc", "anrc", "hybrid"])),
        node=int(rng.choice([2, 3, 4])),
        slack_voltage=rng.uniform(0.97, 1.05),
        pv_kwp=rng.uniform(0.5, 6.0),
        kva=rng.uniform(2.5, 6.0),
        battery=battery,
    )
    result = run_day(scenario)
    trace = result.active_trace
    s_max = scenario.active.inverter.s_max
    r = np.repeat(scenario.active.series.r, scenario.grid.inner_per_outer)

    assert np.all(trace.b >= battery.b_min - 1e-9)
    assert np.all(trace.b <= battery.b_max + 1e-9)
    assert np.all(trace.p_inv ** 2 + trace.q_inv ** 2 <= s_max ** 2 + 1e-9)
    assert trace.p_inv == pytest.approx(trace.p_b - r + trace.p_curt, abs=1e-12)
    assert np.all(trace.p_curt >= 0.0)
    assert np.all(trace.p_curt <= r + 1e-12)
