"""
Cramér-Rao bounds for single-target range and velocity estimation.

crb() evaluates the closed-form bounds in terms of occupied-resource
counts. crb_exact() inverts the Fisher information of the actual resource
set, so irregular Ω_s and the delay/Doppler/phase coupling are accounted for.
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
from scipy.constants import speed_of_light

from src.core.types import GridConfig, ResourceSet
from src.core.utils import is_bad_number
from src.scene.channel import atom

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CrbParams:
    """Inputs of the closed-form bounds."""
    snr: float  # linear
    n_sub_used: int  # n, occupied subcarriers
    n_sym_used: int  # m, occupied symbols
    n_subcarriers: int  # N
    n_symbols: int  # M
    subcarrier_spacing: float  # Δf, Hz
    symbol_duration: float  # T_o, s
    carrier_freq: float  # f_c, Hz
    light_speed: float = speed_of_light

    def __post_init__(self):
        for name in ("snr", "n_sub_used", "n_sym_used", "n_subcarriers", "n_symbols",
                     "subcarrier_spacing", "symbol_duration", "carrier_freq", "light_speed"):
            value = getattr(self, name)
            if is_bad_number(value) or value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")

    @classmethod
    def from_grid(cls, config: GridConfig, rs: ResourceSet, snr: float) -> "CrbParams":
        """Counts taken from the resource set, constants from the grid."""
        return cls(
            snr=snr,
            n_sub_used=rs.n_sub_used,
            n_sym_used=rs.n_sym_used,
            n_subcarriers=config.n_subcarriers,
            n_symbols=config.n_symbols,
            subcarrier_spacing=config.subcarrier_spacing,
            symbol_duration=config.symbol_duration,
            carrier_freq=config.carrier_freq,
            light_speed=config.light_speed,
        )


class CrbResult(NamedTuple):
    """Variance bounds of one target."""
    range_var: float  # m²
    velocity_var: float  # (m/s)²
    delay_var: float  # s²
    doppler_var: float  # Hz²


def crb(params: CrbParams) -> Tuple[float, float]:
    """
    Closed-form bounds (σ²_range, σ²_velocity).

    σ²_range    = 3c² / (SNR·8π²·M·N·(n²-1)·Δf²)
    σ²_velocity = 3c² / (SNR·8π²·f_c²·M·N·(m²-1)·T_o²)

    n and m are the occupied subcarrier/symbol counts. The range bound
    matches a monostatic d = c·τ/2 reading of the delay.

    Raises:
        ValueError: n < 2 or m < 2
    """
    n, m = params.n_sub_used, params.n_sym_used
    if n < 2 or m < 2:
        raise ValueError(f"crb needs n >= 2 and m >= 2, got n={n}, m={m}")
    c2 = params.light_speed ** 2
    common = params.snr * 8.0 * math.pi ** 2 * params.n_symbols * params.n_subcarriers
    range_var = 3.0 * c2 / (common * (n ** 2 - 1) * params.subcarrier_spacing ** 2)
    velocity_var = 3.0 * c2 / (
        common * params.carrier_freq ** 2 * (m ** 2 - 1) * params.symbol_duration ** 2
    )
    return range_var, velocity_var


def crb_exact(config: GridConfig, rs: ResourceSet, snr: float) -> CrbResult:
    """
    Fisher-information bound for one target on the given resource set.

    Unknowns are (τ, α, Re β, Im β) under circular Gaussian noise with
    |β|²/σ² = snr. The information does not depend on the true (τ, α),
    so the atom is evaluated at the origin. Range is d = c·τ and velocity
    v = α·λ/2.

    The information is formed in resolution-cell units u = τ·NΔf,
    w = α·MT_o, where all four columns have comparable scale, and the
    variances are mapped back to seconds and hertz afterwards.
    """
    if is_bad_number(snr) or snr <= 0:
        raise ValueError(f"snr must be > 0, got {snr}")
    N, M = config.shape
    a = atom(config, rs, 0.0, 0.0).values
    n = rs.subcarriers.astype(float)
    m = rs.symbols.astype(float)
    D = np.column_stack([
        -2j * np.pi * (n / N) * a,
        2j * np.pi * (m / M) * a,
        a,
        1j * a,
    ])
    # unit gain, σ² = 1/snr
    fim = 2.0 * snr * np.real(D.conj().T @ D)
    if np.linalg.matrix_rank(fim) < fim.shape[0]:
        logger.warning("Fisher information is singular for this resource set")
        return CrbResult(math.inf, math.inf, math.inf, math.inf)
    cov = np.linalg.inv(fim)
    delay_var = float(cov[0, 0]) * config.delay_cell ** 2
    doppler_var = float(cov[1, 1]) * config.doppler_cell ** 2
    return CrbResult(
        range_var=config.light_speed ** 2 * delay_var,
        velocity_var=(config.wavelength / 2.0) ** 2 * doppler_var,
        delay_var=delay_var,
        doppler_var=doppler_var,
    )
