"""Exception hierarchy shared by the services and the command-line runner.

``ModelValidationError`` covers bad inputs and structural problems (CLI exit 2);
``NumericalError`` covers failures that happen while computing (CLI exit 3).
"""
from typing import Optional


class DisparityError(Exception):
    """Root of every error raised by this package."""


class ModelValidationError(DisparityError, ValueError):
    pass


class LPDimensionError(ModelValidationError):
    pass


class BatteryDomainError(ModelValidationError):
    pass


class InverterDomainError(ModelValidationError):
    pass


class FlexibilityInfeasibleError(ModelValidationError):
    pass


class PriceConvexityError(ModelValidationError):
    pass


class FeederTopologyError(ModelValidationError):
    pass


class ScenarioFileError(ModelValidationError):
    pass


class NumericalError(DisparityError, RuntimeError):
    pass


class LPIterationLimitError(NumericalError):
    pass


class ArbitrageInfeasibleError(NumericalError):
    def __init__(self, message: str, family: str):
        super().__init__(f"{message} (constraint family: {family})")
        self.family = family


class PowerFlowDivergedError(NumericalError):
    pass


class SimulationStepError(NumericalError):
    def __init__(self, message: str, step: int, minute: Optional[int] = None):
        where = f"outer step {step}" if minute is None else f"outer step {step}, minute {minute}"
        super().__init__(f"{message} at {where}")
        self.step = step
        self.minute = minute
