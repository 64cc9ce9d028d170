from pathlib import Path

import pytest

from app.services.scenario_io import load_scenario
from app.services.simulation import run_day

BUNDLED = Path(__file__).resolve().parent.parent / "scenarios" / "four_bus_feeder.json"

CASES = [("prc", 2), ("prc", 3), ("prc", 4), ("anrc", 4), ("hybrid", 4), ("none", 4)]


@pytest.fixture(scope="module")
def study():
    _, scenario = load_scenario(BUNDLED)
    return {(policy, node): run_day(scenario.with_policy(policy).with_active_node(node))
            for policy, node in CASES}


def test_reinforcing_losses_grow_along_the_feeder(study):
    lcg = {node: study[("prc", node)].metrics.lcg_pct for node in (2, 3, 4)}
    assert lcg[2] == pytest.approx(0.0, abs=1e-3)
    assert lcg[4] >= lcg[3] >= lcg[2]
    assert lcg[4] > 0


def test_reinforcing_rules_curtail_more_than_non_reinforcing_at_feeder_end(study):
    assert study[("prc", 4)].metrics.tce > study[("anrc", 4)].metrics.tce >= 0.0


def test_hybrid_costs_no_more_than_reinforcing(study):
    assert study[("hybrid", 4)].metrics.lcg_pct <= study[("prc", 4)].metrics.lcg_pct


def test_hybrid_corrects_voltage_no_worse_than_uncontrolled(study):
    assert study[("hybrid", 4)].metrics.cvc <= study[("none", 4)].metrics.cvc


def test_full_day_runtime(study):
    for result in study.values():
        assert result.timings["wall_s"] < 30.0
        # mean time per receding-horizon LP, with headroom for slow runners
        assert result.timings["arbitrage_total_s"] / result.grid.N < 0.15
