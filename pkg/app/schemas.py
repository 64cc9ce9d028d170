from pydantic import BaseModel, Field, field_validator, model_validator
from typing import List, Optional, Dict, Any

from app.services.inverter_rules import Policy


class TimeGridConfig(BaseModel):
    N: int = Field(96, ge=1)
    h: float = Field(0.25, gt=0)
    inner_per_outer: int = Field(15, ge=1)


class BranchConfig(BaseModel):
    from_node: int
    to_node: int
    r_ohm: float = Field(..., gt=0)
    x_ohm: float = Field(..., gt=0)


class RulesConfig(BaseModel):
    u_min: float = Field(0.92, gt=0)
    u_max: float = Field(1.08, gt=0)
    delta_perm: float = Field(0.04, gt=0, lt=1)


class FeederConfig(BaseModel):
    nodes: List[int] = Field(..., min_length=1)
    branches: List[BranchConfig]
    v_base: Optional[float] = Field(None, gt=0)  # falls back to settings.default_v_base
    s_base: Optional[float] = Field(None, gt=0)
    slack_voltage: float = Field(1.0, gt=0)
    rules: RulesConfig = RulesConfig()


class BatteryConfig(BaseModel):
    capacity_kwh: float = Field(0.0, ge=0)
    c_rating: Optional[str] = None  # e.g. "1C-1C"; overrides delta_min/delta_max
    delta_min: float = Field(0.0, le=0)
    delta_max: float = Field(0.0, ge=0)
    b_min: float = Field(0.0, ge=0)
    soc_0: float = Field(0.5, ge=0, le=1)
    eta_ch: float = Field(1.0, gt=0, le=1)
    eta_dis: float = Field(1.0, gt=0, le=1)


class FlexibilityConfig(BaseModel):
    K: Optional[float] = Field(None, ge=0)  # default: energy of the envelope midpoint
    epsilon: Optional[float] = Field(None, ge=0)


class InverterConfig(BaseModel):
    s_max: float = Field(..., gt=0)
    p_max: Optional[float] = Field(None, gt=0)  # default: s_max
    pf_wc: float = Field(0.9, gt=0, le=1)


class ProsumerConfig(BaseModel):
    node: int
    series: str = Field(..., min_length=1)  # CSV path, relative to the scenario file
    battery: BatteryConfig = BatteryConfig()
    flexibility: FlexibilityConfig = FlexibilityConfig()
    inverter: InverterConfig


class ScenarioFile(BaseModel):
    timegrid: TimeGridConfig = TimeGridConfig()
    feeder: FeederConfig
    prosumers: List[ProsumerConfig] = Field(..., min_length=1)
    policy: Policy = Policy.NONE
    active_node: int
    seed: int = 0

    @field_validator("policy", mode="before")
    @classmethod
    def lower_policy(cls, value):
        return value.lower() if isinstance(value, str) else value

    @model_validator(mode="after")
    def check_nodes(self):
        nodes = [p.node for p in self.prosumers]
        if len(set(nodes)) != len(nodes):
            raise ValueError("each node carries at most one prosumer")
        if self.active_node not in nodes:
            raise ValueError(f"active_node {self.active_node} has no prosumer")
        return self


class SyntheticProfileConfig(BaseModel):
    days: int = Field(1, ge=1)
    steps_per_day: int = Field(96, ge=1)
    pv_kwp: float = Field(2.5, ge=0)
    kappa: float = Field(0.5, ge=0, le=1)
    flex_pct: float = Field(0.05, ge=0, le=1)
    seed: int = 0


class MetricsReport(BaseModel):
    cost_wic: float
    cost_inv: float
    lcg_abs: Optional[float] = None
    lcg_pct: Optional[float] = None
    tce: float = Field(..., ge=0)
    vci: List[int]
    cvc: float = Field(..., ge=0)
    null_action_cost: Optional[float] = None
    arbitrage_savings: Optional[float] = None


class VoltageReport(BaseModel):
    vci: List[int]
    cvc: float
    u_min: float
    u_max: float


class TimingReport(BaseModel):
    arbitrage_total_s: float
    powerflow_total_s: float
    inner_loop_total_s: float
    wall_s: float


class ReportFile(BaseModel):
    scenario: Dict[str, Any]
    scenario_hash: str
    policy: Policy
    active_node: int
    metrics: MetricsReport
    voltages: Dict[str, VoltageReport]  # keyed by node id
    fallback_minutes: int = Field(..., ge=0)
    trace_files: Dict[str, str]
    schedule_file: str
    timings: TimingReport


class SweepRow(BaseModel):
    value: str
    cost: Optional[float] = None
    lcg_pct: Optional[float] = None
    tce: Optional[float] = None
    cvc: Optional[float] = None
    error: Optional[str] = None
