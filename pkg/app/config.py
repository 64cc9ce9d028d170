from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Logging / output
    log_level: str = "INFO"
    output_dir: str = "runs"

    # Power flow
    powerflow_max_iter: int = 100
    powerflow_voltage_tol: float = 1e-10
    powerflow_mismatch_tol: float = 1e-8

    # Inverter capability: |P|/S_max below this ratio uses the constant Q floor
    q_floor_ratio: float = 0.1

    # Sweep execution (1 = sequential)
    sweep_workers: int = 1

    # Per-unit bases used when a feeder omits them
    default_v_base: float = 400.0
    default_s_base: float = 10.0

    class Config:
        env_file = ".env"
        env_prefix = "DISPARITY_"
        case_sensitive = False


settings = Settings()
