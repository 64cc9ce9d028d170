import json
import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if _ROOT not in sys.path:
    sys.path.insert(0, _ROOT)

import numpy as np
import pytest

from app.services.inverter_rules import Policy, VoltageRuleParams
from app.services.powerflow import four_bus_feeder
from app.services.prosumer_model import (
    BatterySpec,
    InverterSpec,
    PriceSeries,
    ScenarioSeries,
    TimeGrid,
    split_flexible_load,
)
from app.schemas import SyntheticProfileConfig
from app.services.simulation import ProsumerSetup, Scenario
from app.services.scenario_io import write_series_csv
from app.services.synthetic import generate_residential


def _bump(hours, center, width):
    return np.exp(-(((hours - center) / width) ** 2))


def residential_setup(grid: TimeGrid, pv_kwp: float = 4.0, kva: float = 6.0, battery=None,
                      flex_pct: float = 0.05, kappa: float = 0.5) -> ProsumerSetup:
    """Noise-free residential prosumer: two-peak tariff, evening load peak, midday PV."""
    hours = ((np.arange(grid.N) + 0.5) * grid.h) % 24.0
    p_b = 10.0 + 8.0 * _bump(hours, 8.0, 1.5) + 12.0 * _bump(hours, 19.0, 2.0)
    load = 0.3 + 0.8 * _bump(hours, 7.5, 1.2) + 1.2 * _bump(hours, 19.5, 1.8)
    bell = np.where((hours > 6.0) & (hours < 18.0), np.sin(np.pi * (hours - 6.0) / 12.0), 0.0)
    r = pv_kwp * np.maximum(bell, 0.0) ** 1.5
    d, flex = split_flexible_load(load, flex_pct, grid.h)
    series = ScenarioSeries(d=d, r=r, prices=PriceSeries(p_b, kappa * p_b))
    if battery is None:
        battery = BatterySpec.from_c_rating(2.0, "0.5C-0.5C")
    return ProsumerSetup(series=series, battery=battery, flex=flex, inverter=InverterSpec.from_kva(kva))


def feeder_scenario(policy="none", node: int = 4, grid: TimeGrid = None, slack_voltage: float = 1.0,
                    **setup_kwargs) -> Scenario:
    """Three identical prosumers on the four-node line with a 230 V base."""
    grid = grid or TimeGrid(N=24, h=1.0, inner_per_outer=4)
    setup = residential_setup(grid, **setup_kwargs)
    feeder = four_bus_feeder(v_base=230.0, s_base=10.0, slack_voltage=slack_voltage)
    return Scenario(
        feeder=feeder,
        prosumers={2: setup, 3: setup, 4: setup},
        active_node=node,
        policy=Policy(policy),
        rules=VoltageRuleParams(),
        grid=grid,
    )


@pytest.fixture
def small_grid():
    return TimeGrid(N=24, h=1.0, inner_per_outer=4)


@pytest.fixture
def make_scenario():
    return feeder_scenario


@pytest.fixture
def rules():
    return VoltageRuleParams(u_min=0.92, u_max=1.08, delta_perm=0.04)


@pytest.fixture
def battery_2kwh():
    return BatterySpec(b_min=0.0, b_max=2.0, b_0=1.0, delta_min=-1.0, delta_max=1.0)


def write_small_scenario(directory, v_base=230.0, policy="none", active_node=4):
    """Scenario file on a 24 x 4 grid with generated series, written into ``directory``."""
    write_series_csv(generate_residential(SyntheticProfileConfig(steps_per_day=24, pv_kwp=4.0, seed=3)),
                     directory / "series.csv")
    prosumer = {
        "series": "series.csv",
        "battery": {"capacity_kwh": 2.0, "c_rating": "0.5C-0.5C", "soc_0": 0.5},
        "inverter": {"s_max": 6.0},
    }
    scenario = {
        "timegrid": {"N": 24, "h": 1.0, "inner_per_outer": 4},
        "feeder": {
            "nodes": [1, 2, 3, 4],
            "branches": [
                {"from_node": 1, "to_node": 2, "r_ohm": 0.0922, "x_ohm": 0.0470},
                {"from_node": 2, "to_node": 3, "r_ohm": 0.1844, "x_ohm": 0.0940},
                {"from_node": 3, "to_node": 4, "r_ohm": 0.3660, "x_ohm": 0.1864},
            ],
            "v_base": v_base,
            "s_base": 10.0,
        },
        "prosumers": [dict(prosumer, node=node) for node in (2, 3, 4)],
        "policy": policy,
        "active_node": active_node,
    }
    path = directory / "scenario.json"
    path.write_text(json.dumps(scenario))
    return path


@pytest.fixture
def scenario_path(tmp_path):
    return write_small_scenario(tmp_path)
