"""
Resource selection on the OFDM grid.

Ω_s is drawn once per frame by the transmitter. Two draws are supported:
uniformly random cells (elementwise) and a fixed number of subcarriers on a
fixed number of symbols (structured).
"""
import logging
import math
from typing import Optional, Sequence, Union

import numpy as np

from src.core.types import GridConfig, ResourceMode, ResourceSet

logger = logging.getLogger(__name__)

SeedLike = Union[None, int, Sequence[int], np.random.SeedSequence, np.random.Generator]


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _sorted_by_symbol(n: np.ndarray, m: np.ndarray, n_subcarriers: int) -> np.ndarray:
    order = np.argsort(n + m * n_subcarriers, kind="stable")
    return np.column_stack([n[order], m[order]])


def select_resources(
    config: GridConfig,
    mode: Union[str, ResourceMode] = ResourceMode.ELEMENTWISE,
    occupancy: Optional[float] = None,
    n_sub_used: Optional[int] = None,
    n_sym_used: Optional[int] = None,
    seed: SeedLike = None,
) -> ResourceSet:
    """
    Draw the occupied resource set Ω_s.

    Args:
        config: Grid dimensions
        mode: 'elementwise' (needs occupancy) or 'structured' (needs n_sub_used, n_sym_used)
        occupancy: η in (0, 1], elementwise mode
        n_sub_used: Subcarriers per chosen symbol, structured mode
        n_sym_used: Number of chosen symbols, structured mode
        seed: RNG seed or generator

    Returns:
        ResourceSet ordered by ascending (m, n)

    Raises:
        ValueError: Counts resolve to zero cells or exceed the grid
    """
    mode = ResourceMode(mode)
    rng = _rng(seed)
    N, M = config.n_subcarriers, config.n_symbols

    if mode is ResourceMode.ELEMENTWISE:
        if occupancy is None or not (0.0 < occupancy <= 1.0):
            raise ValueError(f"occupancy must be in (0, 1], got {occupancy}")
        # guard against 0.01 * 436800 landing a hair below the integer
        count = int(math.floor(occupancy * N * M + 1e-9))
        if count < 1:
            raise ValueError(f"occupancy {occupancy} selects zero cells on a {N}x{M} grid")
        linear = rng.choice(N * M, size=count, replace=False)
        indices = _sorted_by_symbol(linear % N, linear // N, N)
        rs = ResourceSet(indices, N, M, mode=mode)
    else:
        if n_sub_used is None or n_sym_used is None:
            raise ValueError("structured mode needs n_sub_used and n_sym_used")
        if not (1 <= n_sub_used <= N):
            raise ValueError(f"n_sub_used must be in [1, {N}], got {n_sub_used}")
        if not (1 <= n_sym_used <= M):
            raise ValueError(f"n_sym_used must be in [1, {M}], got {n_sym_used}")
        symbols = np.sort(rng.choice(M, size=n_sym_used, replace=False))
        n_parts, m_parts = [], []
        for m in symbols:
            subs = rng.choice(N, size=n_sub_used, replace=False)
            n_parts.append(subs)
            m_parts.append(np.full(n_sub_used, m))
        indices = _sorted_by_symbol(np.concatenate(n_parts), np.concatenate(m_parts), N)
        rs = ResourceSet(indices, N, M, mode=mode, per_symbol_subcarriers=n_sub_used)

    logger.debug(f"Selected |Ω_s|={len(rs)} ({mode.value}, η={rs.occupancy:.4%}) on {N}x{M}")
    return rs


def full_resource_set(config: GridConfig) -> ResourceSet:
    """Every cell of the grid, ascending (m, n)."""
    N, M = config.shape
    linear = np.arange(N * M)
    return ResourceSet(np.column_stack([linear % N, linear // N]), N, M)


def scatter_to_grid(values: np.ndarray, rs: ResourceSet) -> np.ndarray:
    """Place a vector in Ω_s order onto a zero-filled N×M grid."""
    values = np.asarray(values).reshape(-1)
    if values.size != len(rs):
        raise ValueError(f"expected {len(rs)} values, got {values.size}")
    grid = np.zeros((rs.n_subcarriers, rs.n_symbols), dtype=np.result_type(values, np.complex128))
    grid[rs.subcarriers, rs.symbols] = values
    return grid


def compress_from_grid(grid: np.ndarray, rs: ResourceSet) -> np.ndarray:
    """Read the Ω_s entries of an N×M grid in resource-set order."""
    grid = np.asarray(grid)
    if grid.shape != (rs.n_subcarriers, rs.n_symbols):
        raise ValueError(f"grid shape {grid.shape} does not match {(rs.n_subcarriers, rs.n_symbols)}")
    return grid[rs.subcarriers, rs.symbols].copy()
