"""
Delay/Doppler <-> range/velocity conversion.

Range is the bi-static path length d = c·τ; velocity follows the grid
convention v = α·λ/2.
"""
from typing import Tuple

import numpy as np

from src.core.types import GridConfig
from src.core.utils import ArrayLike


def delay_doppler_to_range_velocity(
    config: GridConfig, delay: ArrayLike, doppler: ArrayLike
) -> Tuple[ArrayLike, ArrayLike]:
    """(τ [s], α [Hz]) -> (range [m], velocity [m/s])."""
    distance = config.light_speed * np.asarray(delay, dtype=float)
    velocity = np.asarray(doppler, dtype=float) * config.wavelength / 2.0
    if distance.ndim == 0:
        return float(distance), float(velocity)
    return distance, velocity


def range_velocity_to_delay_doppler(
    config: GridConfig, distance: ArrayLike, velocity: ArrayLike
) -> Tuple[ArrayLike, ArrayLike]:
    """(range [m], velocity [m/s]) -> (τ [s], α [Hz])."""
    delay = np.asarray(distance, dtype=float) / config.light_speed
    doppler = 2.0 * np.asarray(velocity, dtype=float) / config.wavelength
    if delay.ndim == 0:
        return float(delay), float(doppler)
    return delay, doppler


def max_unambiguous_velocity(config: GridConfig) -> float:
    return 0.25 * config.doppler_span * config.wavelength
