import numpy as np
import pytest

from app.errors import FlexibilityInfeasibleError, LPDimensionError
from app.services.arbitrage import (
    ArbitrageInputs,
    Schedule,
    build_arbitrage_lp,
    epigraph_bound,
    evaluate_cost,
    null_action_cost,
    rebuild_for_step,
    segment_values,
    solve_arbitrage,
)
from app.services.lp_solver import solve_lp
from app.services.prosumer_model import (
    BatterySpec,
    FlexibilitySpec,
    PriceSeries,
    ScenarioSeries,
    TimeGrid,
    battery_power,
)


def make_inputs(z, p_b, p_s, h=1.0, battery=None, flex=None):
    z = np.asarray(z, float)
    N = z.size
    series = ScenarioSeries(np.maximum(z, 0.0), np.maximum(-z, 0.0), PriceSeries(p_b, p_s))
    return ArbitrageInputs(
        grid=TimeGrid(N=N, h=h, inner_per_outer=1),
        battery=battery or BatterySpec.none(),
        flex=flex or FlexibilitySpec.none(N),
        series=series,
    )


def random_inputs(rng, N, eta=1.0, with_flex=True, h=1.0):
    z = rng.uniform(-2.0, 2.0, N)
    p_b = rng.uniform(5.0, 30.0, N)
    p_s = rng.uniform(0.0, 1.0, N) * p_b
    battery = BatterySpec(b_min=0.0, b_max=2.0, b_0=1.0, delta_min=-1.0, delta_max=1.0,
                          eta_ch=eta, eta_dis=eta)
    flex = None
    if with_flex:
        y_max = rng.uniform(0.0, 0.6, N)
        flex = FlexibilitySpec(np.zeros(N), y_max, K=float(0.5 * h * y_max.sum()), epsilon=1e-6)
    return make_inputs(z, p_b, p_s, h=h, battery=battery, flex=flex)


@pytest.mark.parametrize("N", [1, 4, 96])
def test_lp_shape(N):
    rng = np.random.default_rng(N)
    lp = build_arbitrage_lp(random_inputs(rng, N, h=0.25))
    assert lp.A.shape == (6 * N + 2, 3 * N)
    assert lp.c == pytest.approx(np.concatenate([np.zeros(2 * N), np.ones(N)]))


def test_segment_rows_follow_price_and_efficiency():
    rng = np.random.default_rng(0)
    inp = random_inputs(rng, 5, eta=0.9, h=0.5)
    lp = build_arbitrage_lp(inp)
    N, h = 5, 0.5
    p_b, p_s, z = inp.series.prices.p_b, inp.series.prices.p_s, inp.series.z
    expected_x = [p_b / 0.9, p_s * 0.9, p_b * 0.9, p_s / 0.9]
    expected_price = [p_b, p_s, p_b, p_s]
    for seg in range(4):
        rows = seg * N + np.arange(N)
        assert lp.A[rows, np.arange(N)] == pytest.approx(expected_x[seg])
        assert lp.A[rows, N + np.arange(N)] == pytest.approx(h * expected_price[seg])
        assert lp.A[rows, 2 * N + np.arange(N)] == pytest.approx(-np.ones(N))
        assert lp.b[rows] == pytest.approx(-h * z * expected_price[seg])


def test_equal_prices_make_buy_and_sell_rows_coincide():
    inp = make_inputs([1.0, -1.0], [4.0, 4.0], [4.0, 4.0],
                      battery=BatterySpec(b_max=1.0, delta_min=-1.0, delta_max=1.0))
    lp = build_arbitrage_lp(inp)
    assert np.array_equal(lp.A[0:2], lp.A[6:8])
    assert np.array_equal(lp.b[0:2], lp.b[6:8])


def test_single_step_purchase():
    schedule = solve_arbitrage(make_inputs([1.0], [10.0], [5.0]))
    assert schedule.objective == pytest.approx(10.0)
    assert schedule.t == pytest.approx([10.0])


def test_two_step_battery_arbitrage():
    battery = BatterySpec(b_min=0.0, b_max=1.0, b_0=0.0, delta_min=-1.0, delta_max=1.0)
    schedule = solve_arbitrage(make_inputs([0.0, 0.0], [1.0, 3.0], [1.0, 3.0], battery=battery))
    assert schedule.x == pytest.approx([1.0, -1.0], abs=1e-9)
    assert schedule.objective == pytest.approx(-2.0)


def test_flat_prices_leave_nothing_to_gain():
    battery = BatterySpec(b_min=0.0, b_max=2.0, b_0=0.0, delta_min=-1.0, delta_max=1.0)
    z = [1.0, 2.0, 0.5, 1.5]
    inp = make_inputs(z, [5.0] * 4, [5.0] * 4, battery=battery)
    assert solve_arbitrage(inp).objective == pytest.approx(5.0 * sum(z))


@pytest.mark.parametrize("z, expected", [([2.0], 5.0), ([-2.0], -2.0), ([0.0], 0.0)])
def test_evaluate_cost_examples(z, expected):
    inp = make_inputs(z, [10.0], [4.0], h=0.25)
    schedule = Schedule(x=np.zeros(1), y=np.zeros(1), t=np.zeros(1), objective=0.0)
    assert evaluate_cost(schedule, inp) == pytest.approx(expected)


def test_epigraph_is_tight_and_objective_matches_direct_cost():
    rng = np.random.default_rng(5)
    for _ in range(100):
        inp = random_inputs(rng, int(rng.integers(2, 9)), eta=float(rng.choice([1.0, 0.9])))
        lp = build_arbitrage_lp(inp)
        solution = solve_lp(lp)
        N = inp.grid.N
        x, y, t = solution.x[:N], solution.x[N:2 * N], solution.x[2 * N:]
        assert t == pytest.approx(segment_values(inp, x, y).max(axis=0), abs=1e-7)
        schedule = solve_arbitrage(inp)
        assert schedule.objective == pytest.approx(evaluate_cost(schedule, inp), abs=1e-6)


def test_epigraph_bound_dominates_reachable_segments():
    rng = np.random.default_rng(9)
    inp = random_inputs(rng, 6)
    M = epigraph_bound(inp)
    x_lo, x_hi = inp.battery.x_bounds(inp.grid.h)
    for _ in range(200):
        x = rng.uniform(x_lo, x_hi, 6)
        y = rng.uniform(inp.flex.y_min, inp.flex.y_max)
        assert np.abs(segment_values(inp, x, y)).max() < M


def enumerate_battery_schedules(inp, levels):
    """Brute-force minimum over an evenly spaced grid of energy deltas."""
    N, h = inp.grid.N, inp.grid.h
    battery = inp.battery
    x_lo, x_hi = battery.x_bounds(h)
    axis = np.linspace(x_lo, x_hi, levels)
    X = np.stack(np.meshgrid(*([axis] * N), indexing="ij"), axis=-1).reshape(-1, N)
    running = np.cumsum(X, axis=1)
    feasible = np.all((running >= battery.b_min - battery.b_0 - 1e-9)
                      & (running <= battery.b_max - battery.b_0 + 1e-9), axis=1)
    X = X[feasible]
    net = inp.series.z + battery_power(X, battery, h)
    prices = inp.series.prices
    cost = h * (np.maximum(net, 0.0) * prices.p_b - np.maximum(-net, 0.0) * prices.p_s).sum(axis=1)
    return float(cost.min())


@pytest.mark.parametrize("N, eta", [(3, 1.0), (3, 0.9), (4, 1.0), (4, 0.9)])
def test_lp_matches_enumeration(N, eta):
    rng = np.random.default_rng(100 + N + int(eta * 10))
    for _ in range(3):
        inp = random_inputs(rng, N, eta=eta, with_flex=False)
        lp_cost = solve_arbitrage(inp).objective
        coarse = enumerate_battery_schedules(inp, 21)
        step = 2.0 / 20
        bound = N * step * inp.series.prices.p_b.max() / eta
        assert lp_cost <= coarse + 1e-9
        assert coarse - lp_cost <= bound
        if N == 3:
            fine = enumerate_battery_schedules(inp, 41)
            assert lp_cost <= fine + 1e-9
            assert fine - lp_cost <= coarse - lp_cost + 1e-12


def test_higher_feed_in_price_never_costs_more():
    rng = np.random.default_rng(21)
    for _ in range(5):
        inp = random_inputs(rng, 8, eta=0.95)
        previous = np.inf
        for kappa in [0.0, 0.3, 0.6, 1.0]:
            series = inp.series.with_kappa(kappa)
            objective = solve_arbitrage(ArbitrageInputs(inp.grid, inp.battery, inp.flex, series)).objective
            assert objective <= previous + 1e-7
            previous = objective


def test_feed_in_price_irrelevant_without_export():
    rng = np.random.default_rng(4)
    N = 8
    y_max = rng.uniform(0.1, 0.5, N)
    flex = FlexibilitySpec(np.zeros(N), y_max, K=float(0.5 * y_max.sum()), epsilon=1e-6)
    p_b = rng.uniform(5.0, 30.0, N)
    z = rng.uniform(0.2, 1.0, N)
    costs = [solve_arbitrage(make_inputs(z, p_b, kappa * p_b, flex=flex)).objective for kappa in (0.1, 0.9)]
    assert costs[0] == pytest.approx(costs[1], abs=1e-7)


def test_flexible_energy_conserved_and_never_worse_than_idle():
    rng = np.random.default_rng(8)
    for _ in range(10):
        inp = random_inputs(rng, 10, h=0.25)
        schedule = solve_arbitrage(inp)
        energy = inp.grid.h * schedule.y.sum()
        assert inp.flex.K - inp.flex.epsilon - 1e-9 <= energy <= inp.flex.K + inp.flex.epsilon + 1e-9
        assert np.all(schedule.y >= inp.flex.y_min - 1e-9)
        assert np.all(schedule.y <= inp.flex.y_max + 1e-9)
        assert schedule.objective <= null_action_cost(inp) + 1e-7


def test_unreachable_flexibility_target_rejected():
    flex = FlexibilitySpec(np.zeros(2), np.ones(2), K=10.0, epsilon=0.0)
    with pytest.raises(FlexibilityInfeasibleError):
        solve_arbitrage(make_inputs([1.0, 1.0], [1.0, 1.0], [0.5, 0.5], flex=flex))


def test_horizon_mismatch_rejected():
    inp = make_inputs([1.0, 1.0], [1.0, 1.0], [0.5, 0.5])
    with pytest.raises(LPDimensionError):
        ArbitrageInputs(TimeGrid(N=3, h=1.0, inner_per_outer=1), inp.battery, inp.flex, inp.series)


def test_rebuild_keeps_remaining_plan_optimal():
    rng = np.random.default_rng(13)
    inp = random_inputs(rng, 10, eta=0.95, h=0.5)
    schedule = solve_arbitrage(inp)
    step = 4
    b_now = inp.battery.b_0 + schedule.x[:step].sum()
    used = inp.grid.h * schedule.y[:step].sum()
    tail = rebuild_for_step(inp, step, b_now, used)
    assert tail.grid.N == 6
    assert tail.battery.b_0 == pytest.approx(b_now)
    assert tail.flex.K == pytest.approx(inp.flex.K - used)
    tail_cost = solve_arbitrage(tail).objective
    assert tail_cost == pytest.approx(schedule.objective - schedule.t[:step].sum(), abs=1e-6)


def test_rebuild_clamps_overspent_flexibility():
    rng = np.random.default_rng(2)
    inp = random_inputs(rng, 6)
    tail = rebuild_for_step(inp, 3, 1.0, inp.flex.K + 5.0)
    assert tail.flex.K == pytest.approx(max(inp.grid.h * tail.flex.y_min.sum() - tail.flex.epsilon, 0.0))
    solve_arbitrage(tail)
    with pytest.raises(LPDimensionError):
        rebuild_for_step(inp, 6, 1.0, 0.0)
