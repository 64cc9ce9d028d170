"""Scenario ingestion and report/trace emission."""
import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from app.config import settings
from app.errors import ScenarioFileError
from app.schemas import (
    MetricsReport,
    ProsumerConfig,
    ReportFile,
    ScenarioFile,
    SweepRow,
    TimingReport,
    VoltageReport,
)
from app.services.inverter_rules import VoltageRuleParams
from app.services.metrics import voltage_indices
from app.services.powerflow import Branch, FeederModel
from app.services.prosumer_model import (
    BatterySpec,
    FlexibilitySpec,
    InverterSpec,
    PriceSeries,
    ScenarioSeries,
    TimeGrid,
    default_epsilon,
)
from app.services.simulation import ProsumerSetup, Scenario, SimulationResult, SweepPoint
from app.services.synthetic import SERIES_COLUMNS

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def read_series_csv(path: PathLike, expected_steps: Optional[int] = None) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise ScenarioFileError(f"series file {path} does not exist")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ScenarioFileError(f"cannot parse series file {path}: {exc}")

    missing = [c for c in SERIES_COLUMNS if c not in frame.columns]
    if missing:
        raise ScenarioFileError(f"series file {path} lacks columns {missing}")
    try:
        frame = frame[SERIES_COLUMNS].apply(pd.to_numeric).sort_values("step").reset_index(drop=True)
    except (ValueError, TypeError) as exc:
        raise ScenarioFileError(f"series file {path} has non-numeric entries: {exc}")

    if expected_steps is not None and len(frame) != expected_steps:
        raise ScenarioFileError(f"series file {path} has {len(frame)} rows, expected {expected_steps}")
    if frame.isna().any().any():
        raise ScenarioFileError(f"series file {path} has missing values")
    if (frame["d"] < 0).any() or (frame["r"] < 0).any():
        raise ScenarioFileError(f"series file {path} has negative load or generation")
    if (frame["y_min"] < 0).any() or (frame["y_min"] > frame["y_max"]).any():
        raise ScenarioFileError(f"series file {path} needs 0 <= y_min <= y_max")
    return frame


def write_series_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame[SERIES_COLUMNS].to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} series rows to {path}")
    return path


def build_prosumer(config: ProsumerConfig, frame: pd.DataFrame, grid: TimeGrid) -> ProsumerSetup:
    series = ScenarioSeries(
        d=frame["d"].to_numpy(),
        r=frame["r"].to_numpy(),
        prices=PriceSeries(frame["p_b"].to_numpy(), frame["p_s"].to_numpy()),
    )

    bat = config.battery
    if bat.c_rating:
        battery = BatterySpec.from_c_rating(bat.capacity_kwh, bat.c_rating, bat.b_min, bat.soc_0,
                                            bat.eta_ch, bat.eta_dis)
    else:
        battery = BatterySpec(
            b_min=bat.b_min,
            b_max=bat.b_min + bat.capacity_kwh,
            b_0=bat.b_min + bat.soc_0 * bat.capacity_kwh,
            delta_min=bat.delta_min,
            delta_max=bat.delta_max,
            eta_ch=bat.eta_ch,
            eta_dis=bat.eta_dis,
        )

    y_min, y_max = frame["y_min"].to_numpy(), frame["y_max"].to_numpy()
    y_ref = 0.5 * (y_min + y_max)
    K = config.flexibility.K if config.flexibility.K is not None else float(grid.h * y_ref.sum())
    epsilon = config.flexibility.epsilon if config.flexibility.epsilon is not None else default_epsilon(K)
    flex = FlexibilitySpec(y_min, y_max, K, epsilon, y_ref)

    inv = config.inverter
    inverter = InverterSpec(s_max=inv.s_max, p_max=inv.p_max or inv.s_max, pf_wc=inv.pf_wc)
    return ProsumerSetup(series=series, battery=battery, flex=flex, inverter=inverter)


def read_scenario_file(path: PathLike) -> ScenarioFile:
    path = Path(path)
    if not path.is_file():
        raise ScenarioFileError(f"scenario file {path} does not exist")
    return ScenarioFile.model_validate_json(path.read_text())


def write_scenario_file(scenario_file: ScenarioFile, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(scenario_file.model_dump_json(indent=2))
    return path


def build_scenario(scenario_file: ScenarioFile, base_dir: PathLike = ".") -> Scenario:
    base_dir = Path(base_dir)
    grid = TimeGrid(**scenario_file.timegrid.model_dump())
    fc = scenario_file.feeder
    feeder = FeederModel(
        nodes=fc.nodes,
        branches=[Branch(b.from_node, b.to_node, b.r_ohm, b.x_ohm) for b in fc.branches],
        v_base=fc.v_base or settings.default_v_base,
        s_base=fc.s_base or settings.default_s_base,
        slack_voltage=fc.slack_voltage,
    )
    prosumers: Dict[int, ProsumerSetup] = {}
    for config in scenario_file.prosumers:
        frame = read_series_csv(base_dir / config.series, grid.N)
        prosumers[config.node] = build_prosumer(config, frame, grid)
    return Scenario(
        feeder=feeder,
        prosumers=prosumers,
        active_node=scenario_file.active_node,
        policy=scenario_file.policy,
        rules=VoltageRuleParams(**fc.rules.model_dump()),
        grid=grid,
        rng_seed=scenario_file.seed,
    )


def load_scenario(path: PathLike) -> Tuple[ScenarioFile, Scenario]:
    """Parse and validate a scenario document; series paths resolve against its directory."""
    scenario_file = read_scenario_file(path)
    return scenario_file, build_scenario(scenario_file, Path(path).parent)


def scenario_hash(scenario_file: ScenarioFile) -> str:
    canonical = json.dumps(scenario_file.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_report(result: SimulationResult, scenario_file: ScenarioFile, rules: VoltageRuleParams,
                 out_dir: PathLike) -> ReportFile:
    """Write report.json, one trace CSV per node and schedule.csv into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    trace_files: Dict[str, str] = {}
    voltages: Dict[str, VoltageReport] = {}
    for node in sorted(result.traces):
        name = f"trace_node{node}.csv"
        result.node_trace(node).to_csv(out_dir / name, index=False)
        trace_files[str(node)] = name
        u = result.traces[node].u
        indices, correction = voltage_indices(u, rules)
        voltages[str(node)] = VoltageReport(vci=list(indices), cvc=correction,
                                            u_min=float(np.min(u)), u_max=float(np.max(u)))
    result.schedule_frame().to_csv(out_dir / "schedule.csv", index=False)

    report = ReportFile(
        scenario=scenario_file.model_dump(mode="json"),
        scenario_hash=scenario_hash(scenario_file),
        policy=result.policy,
        active_node=result.active_node,
        metrics=MetricsReport(**result.metrics.to_dict()),
        voltages=voltages,
        fallback_minutes=result.fallback_minutes,
        trace_files=trace_files,
        schedule_file="schedule.csv",
        timings=TimingReport(**result.timings),
    )
    (out_dir / "report.json").write_text(report.model_dump_json(indent=2))
    logger.info(f"Wrote report and {len(trace_files)} trace files to {out_dir}")
    return report


def sweep_rows(points: List[SweepPoint]) -> List[SweepRow]:
    rows = []
    for point in points:
        if point.ok:
            m = point.result.metrics
            rows.append(SweepRow(value=str(point.value), cost=m.cost_inv, lcg_pct=m.lcg_pct, tce=m.tce, cvc=m.cvc))
        else:
            rows.append(SweepRow(value=str(point.value), error=point.error))
    return rows


def write_sweep_summary(points: List[SweepPoint], path: PathLike) -> pd.DataFrame:
    frame = pd.DataFrame([row.model_dump() for row in sweep_rows(points)],
                         columns=["value", "cost", "lcg_pct", "tce", "cvc", "error"])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote sweep summary with {len(frame)} rows to {path}")
    return frame
