"""
Core utility functions.
Pure functions for conversions and span bookkeeping.
"""
import math
from typing import Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


def is_bad_number(x) -> bool:
    """True for None, non-numeric or non-finite values."""
    if x is None:
        return True
    try:
        v = float(x)
    except (TypeError, ValueError):
        return True
    return not math.isfinite(v)


def safe_divide(numerator: float, denominator: float, default: float = 0.0) -> float:
    """
    Safely divide two numbers, returning default if denominator is zero.

    Args:
        numerator: Dividend
        denominator: Divisor
        default: Value to return if denominator is zero or NaN

    Returns:
        Division result or default value
    """
    if denominator == 0 or np.isnan(denominator):
        return default
    return numerator / denominator


def db_to_linear(value_db: ArrayLike) -> ArrayLike:
    """Power ratio in dB to linear."""
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)


def wrap_cells(value: ArrayLike, period: float) -> ArrayLike:
    """Reduce into [0, period)."""
    wrapped = np.mod(value, period)
    # np.mod can round up to exactly period for tiny negatives
    return np.where(wrapped >= period, wrapped - period, wrapped)


def wrap_centered(value: ArrayLike, period: float) -> ArrayLike:
    """Reduce into [-period/2, period/2)."""
    return wrap_cells(np.asarray(value) + 0.5 * period, period) - 0.5 * period


def circular_difference(a: ArrayLike, b: ArrayLike, period: float) -> ArrayLike:
    """Signed shortest difference a - b on a circle of the given period."""
    return wrap_centered(np.asarray(a) - np.asarray(b), period)
