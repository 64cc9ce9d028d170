"""Synthetic residential day series: two-peak tariff, morning/evening load, midday PV."""
import logging
from typing import List

import numpy as np
import pandas as pd

from app.schemas import SyntheticProfileConfig

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ["step", "p_b", "p_s", "d", "r", "y_min", "y_max"]


def _bump(hours: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-(((hours - center) / width) ** 2))


def price_profile(hours: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Buying price (cents/kWh) with a morning and a stronger evening peak."""
    base = 10.0 + 8.0 * _bump(hours, 8.0, 1.5) + 12.0 * _bump(hours, 19.0, 2.0)
    return np.maximum(base + rng.normal(0.0, 0.3, hours.size), 1.0)


def load_profile(hours: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Household demand (kW) with morning and evening peaks."""
    base = 0.3 + 0.8 * _bump(hours, 7.5, 1.2) + 1.2 * _bump(hours, 19.5, 1.8)
    return np.maximum(base + rng.normal(0.0, 0.05, hours.size), 0.05)


def pv_profile(hours: np.ndarray, pv_kwp: float, rng: np.random.Generator) -> np.ndarray:
    """PV output (kW): a sine bell between 06:00 and 18:00 with light cloud attenuation."""
    daylight = (hours > 6.0) & (hours < 18.0)
    bell = np.where(daylight, np.sin(np.pi * (hours - 6.0) / 12.0), 0.0)
    return pv_kwp * np.maximum(bell, 0.0) ** 1.5 * rng.uniform(0.85, 1.0, hours.size)


def generate_residential(config: SyntheticProfileConfig) -> pd.DataFrame:
    """Series table for ``config.days`` days; the same seed always yields the same table."""
    rng = np.random.default_rng(config.seed)
    h = 24.0 / config.steps_per_day
    steps = config.days * config.steps_per_day
    hours = ((np.arange(steps) + 0.5) * h) % 24.0

    p_b = price_profile(hours, rng)
    load = load_profile(hours, rng)
    r = pv_profile(hours, config.pv_kwp, rng)
    flexible = config.flex_pct * load

    frame = pd.DataFrame({
        "step": np.arange(steps),
        "p_b": np.round(p_b, 6),
        "p_s": np.round(config.kappa * p_b, 6),
        "d": np.round(load - flexible, 6),
        "r": np.round(r, 6),
        "y_min": 0.0,
        "y_max": np.round(2.0 * flexible, 6),
    })
    logger.info(f"Generated {steps} synthetic steps (seed {config.seed}, {config.pv_kwp} kWp PV)")
    return frame[SERIES_COLUMNS]


def split_days(frame: pd.DataFrame, steps_per_day: int) -> List[pd.DataFrame]:
    """One table per day, each with its own 0-based step column."""
    days = []
    for start in range(0, len(frame), steps_per_day):
        day = frame.iloc[start:start + steps_per_day].reset_index(drop=True)
        day["step"] = np.arange(len(day))
        days.append(day)
    return days
