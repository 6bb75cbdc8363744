"""
Delay/Doppler dictionary and residual correlation.

The dictionary grid holds γN delays τ̄_p = p/(γNΔf) and γM Dopplers
ᾱ_q = -1/(2T_o) + q/(γMT_o). Columns of the implied sensing matrix are
ordered with the delay index fastest: column j = p + q·N_g.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import fft as sp_fft

from src.core.types import ChannelVector, GridConfig, ResourceSet
from src.scene.channel import atom_matrix
from src.scene.resources import scatter_to_grid

logger = logging.getLogger(__name__)

CORRELATION_MODES = ("fft", "direct")

# delay columns per dense block in direct mode
_DIRECT_BLOCK = 256


@dataclass(frozen=True, eq=False)
class DictionarySpec:
    """Oversampled delay/Doppler grid, optionally truncated by physical caps."""
    oversampling: int
    delays: np.ndarray
    dopplers: np.ndarray
    delay_index: np.ndarray  # rows of the full γN grid kept
    doppler_index: np.ndarray  # columns of the full γM grid kept
    n_delay_full: int
    n_doppler_full: int
    delay_step: float
    doppler_step: float
    max_range: Optional[float] = None
    max_velocity: Optional[float] = None

    @classmethod
    def build(
        cls,
        config: GridConfig,
        oversampling: int = 4,
        max_range: Optional[float] = None,
        max_velocity: Optional[float] = None,
    ) -> "DictionarySpec":
        """
        Build the grid for a GridConfig.

        Args:
            config: Grid constants
            oversampling: γ >= 1
            max_range: d_max in m; keeps delays τ̄ <= d_max / c
            max_velocity: v_max in m/s; keeps |ᾱ| <= 2·v_max / λ

        Raises:
            ValueError: Bad γ, non-positive caps, or caps leaving an empty grid
        """
        if int(oversampling) != oversampling or oversampling < 1:
            raise ValueError(f"oversampling must be an integer >= 1, got {oversampling}")
        oversampling = int(oversampling)
        n_delay = oversampling * config.n_subcarriers
        n_doppler = oversampling * config.n_symbols
        delay_step = 1.0 / (n_delay * config.subcarrier_spacing)
        doppler_step = 1.0 / (n_doppler * config.symbol_duration)

        delay_index = np.arange(n_delay)
        doppler_index = np.arange(n_doppler)
        full_delays = delay_index * delay_step
        full_dopplers = -0.5 / config.symbol_duration + doppler_index * doppler_step

        if max_range is not None:
            if max_range <= 0:
                raise ValueError(f"max_range must be > 0, got {max_range}")
            delay_index = delay_index[full_delays <= max_range / config.light_speed * (1 + 1e-12)]
        if max_velocity is not None:
            if max_velocity <= 0:
                raise ValueError(f"max_velocity must be > 0, got {max_velocity}")
            alpha_max = 2.0 * max_velocity / config.wavelength
            doppler_index = doppler_index[np.abs(full_dopplers) <= alpha_max * (1 + 1e-12)]
        if delay_index.size == 0 or doppler_index.size == 0:
            raise ValueError("physical caps leave an empty dictionary grid")

        for arr in (delay_index, doppler_index):
            arr.setflags(write=False)
        delays = full_delays[delay_index]
        dopplers = full_dopplers[doppler_index]
        delays.setflags(write=False)
        dopplers.setflags(write=False)
        return cls(
            oversampling=oversampling,
            delays=delays,
            dopplers=dopplers,
            delay_index=delay_index,
            doppler_index=doppler_index,
            n_delay_full=n_delay,
            n_doppler_full=n_doppler,
            delay_step=delay_step,
            doppler_step=doppler_step,
            max_range=max_range,
            max_velocity=max_velocity,
        )

    @property
    def shape(self) -> Tuple[int, int]:
        """(N_g, M_g) after truncation."""
        return int(self.delays.size), int(self.dopplers.size)

    @property
    def truncated(self) -> bool:
        return self.shape != (self.n_delay_full, self.n_doppler_full)

    def grid_point(self, p: int, q: int) -> Tuple[float, float]:
        return float(self.delays[p]), float(self.dopplers[q])


def ind2sub(index: int, n_rows: int, one_based: bool = False) -> Tuple[int, int]:
    """
    Linear dictionary index -> (delay index, Doppler index).

    With one_based=True the bookkeeping follows the 1-based convention
    q = ⌈Π/N⌉, p = Π - (q-1)·N.
    """
    if one_based:
        if index < 1:
            raise ValueError(f"1-based index must be >= 1, got {index}")
        q = math.ceil(index / n_rows)
        return int(index - (q - 1) * n_rows), int(q)
    if index < 0:
        raise ValueError(f"index must be >= 0, got {index}")
    return int(index % n_rows), int(index // n_rows)


def sub2ind(p: int, q: int, n_rows: int, one_based: bool = False) -> int:
    """Inverse of ind2sub."""
    if one_based:
        return int(p + (q - 1) * n_rows)
    return int(p + q * n_rows)


def sensing_matrix(config: GridConfig, rs: ResourceSet, dictionary: DictionarySpec) -> np.ndarray:
    """Dense Ā with column p + q·N_g equal to a(τ̄_p, ᾱ_q). Small grids only."""
    n_delay, n_doppler = dictionary.shape
    delays = np.tile(dictionary.delays, n_doppler)
    dopplers = np.repeat(dictionary.dopplers, n_delay)
    return atom_matrix(config, rs, delays, dopplers)


def _correlate_fft(values: np.ndarray, rs: ResourceSet, dictionary: DictionarySpec) -> np.ndarray:
    R = scatter_to_grid(values, rs)
    # e^{+j2πnp/(γN)} along subcarriers
    c = dictionary.n_delay_full * sp_fft.ifft(R, n=dictionary.n_delay_full, axis=0)
    if dictionary.truncated:
        c = c[dictionary.delay_index, :]
    # Doppler grid starts at -1/(2T_o): modulate by (-1)^m before the DFT
    sign = np.where(np.arange(rs.n_symbols) % 2 == 0, 1.0, -1.0)
    c = sp_fft.fft(c * sign[None, :], n=dictionary.n_doppler_full, axis=1)
    if dictionary.truncated:
        c = c[:, dictionary.doppler_index]
    return c


def _correlate_direct(
    values: np.ndarray, rs: ResourceSet, config: GridConfig, dictionary: DictionarySpec
) -> np.ndarray:
    n = rs.subcarriers[:, None].astype(float)
    m = rs.symbols[:, None].astype(float)
    weighted = values[:, None] * np.exp(
        -2j * np.pi * m * config.symbol_duration * dictionary.dopplers[None, :]
    )
    out = np.empty(dictionary.shape, dtype=np.complex128)
    for start in range(0, dictionary.delays.size, _DIRECT_BLOCK):
        block = dictionary.delays[start:start + _DIRECT_BLOCK]
        E_tau = np.exp(2j * np.pi * n * config.subcarrier_spacing * block[None, :])
        out[start:start + block.size, :] = E_tau.T @ weighted
    return out


def correlate_residual(
    residual: ChannelVector,
    config: GridConfig,
    dictionary: DictionarySpec,
    mode: str = "fft",
) -> np.ndarray:
    """
    Correlation c = Ā^H h_r on the dictionary grid.

    Args:
        residual: Residual vector ordered by its resource set
        config: Grid constants
        dictionary: Delay/Doppler grid
        mode: 'fft' (scatter + zero-padded 2D transform) or 'direct' (explicit product)

    Returns:
        Complex array of shape (N_g, M_g)
    """
    rs = residual.resource_set
    if (rs.n_subcarriers, rs.n_symbols) != config.shape:
        raise ValueError(f"residual grid {(rs.n_subcarriers, rs.n_symbols)} does not match {config.shape}")
    if mode == "fft":
        return _correlate_fft(residual.values, rs, dictionary)
    if mode == "direct":
        return _correlate_direct(residual.values, rs, config, dictionary)
    raise ValueError(f"Unknown correlation mode '{mode}'. Valid: {', '.join(CORRELATION_MODES)}")
