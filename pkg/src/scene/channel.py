"""
Sparse channel synthesis.

Atoms follow the post-DFT grid model: entry (n, m) of a(τ, α) is
e^{-j2πnΔfτ}·e^{j2πmT_oα}, listed in resource-set order.
"""
import logging
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from src.core.types import (
    ChannelVector,
    GridConfig,
    ModSymbolGrid,
    ResourceSet,
    Scene,
    TargetTruth,
)
from src.core.utils import db_to_linear
from src.scene.resources import SeedLike, _rng, compress_from_grid

logger = logging.getLogger(__name__)

CONSTELLATIONS = {
    "bpsk": np.array([1.0, -1.0], dtype=np.complex128),
    "qpsk": np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4))),
    "psk8": np.exp(1j * np.pi / 4 * np.arange(8)),
}

PATHS = ("direct", "full_tx_rx")


def _phase(config: GridConfig, n: np.ndarray, m: np.ndarray, delay, doppler) -> np.ndarray:
    return -n * config.subcarrier_spacing * delay + m * config.symbol_duration * doppler


def atom(config: GridConfig, rs: ResourceSet, delay: float, doppler: float) -> ChannelVector:
    """
    Response vector a(τ, α) over Ω_s, unnormalized (‖a‖² = |Ω_s|).

    Args:
        config: Grid constants
        rs: Resource set fixing the element order
        delay: τ in seconds
        doppler: α in Hz

    Returns:
        ChannelVector of unit-modulus entries
    """
    if not (np.isfinite(delay) and np.isfinite(doppler)):
        raise ValueError(f"atom parameters must be finite, got ({delay}, {doppler})")
    phase = _phase(config, rs.subcarriers, rs.symbols, delay, doppler)
    return ChannelVector(np.exp(2j * np.pi * phase), rs)


def atom_matrix(
    config: GridConfig, rs: ResourceSet, delays: Sequence[float], dopplers: Sequence[float]
) -> np.ndarray:
    """Columns a(τ_k, α_k), shape (|Ω_s|, K)."""
    delays = np.asarray(delays, dtype=float).reshape(1, -1)
    dopplers = np.asarray(dopplers, dtype=float).reshape(1, -1)
    phase = _phase(config, rs.subcarriers[:, None], rs.symbols[:, None], delays, dopplers)
    return np.exp(2j * np.pi * phase)


def channel_matrix(config: GridConfig, targets: Iterable[TargetTruth]) -> np.ndarray:
    """Noiseless N×M channel H = Σ β_k e^{-j2πnΔfτ_k} e^{j2πmT_oα_k}."""
    n = np.arange(config.n_subcarriers)[:, None]
    m = np.arange(config.n_symbols)[None, :]
    H = np.zeros(config.shape, dtype=np.complex128)
    for target in targets:
        H += target.gain * np.exp(2j * np.pi * _phase(config, n, m, target.delay, target.doppler))
    return H


def modulation_grid(
    rs: ResourceSet, constellation: Union[str, np.ndarray] = "qpsk", seed: SeedLike = None
) -> ModSymbolGrid:
    """
    Draw random symbols for every occupied resource.

    Raises:
        ValueError: Unknown constellation name or non-unit-modulus points
    """
    if isinstance(constellation, str):
        key = constellation.lower()
        if key not in CONSTELLATIONS:
            raise ValueError(f"Unknown constellation '{constellation}'. Valid: {', '.join(CONSTELLATIONS)}")
        points = CONSTELLATIONS[key]
    else:
        points = np.asarray(constellation, dtype=np.complex128).reshape(-1)
        if points.size == 0 or np.max(np.abs(np.abs(points) - 1.0)) > 1e-12:
            raise ValueError("constellation points must be unit modulus")
    rng = _rng(seed)
    return ModSymbolGrid(points[rng.integers(0, points.size, size=len(rs))], rs)


def _complex_noise(rng: np.random.Generator, shape, noise_power: float) -> np.ndarray:
    scale = np.sqrt(noise_power / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synthesize_channel(
    scene: Scene,
    rs: ResourceSet,
    config: GridConfig,
    seed: SeedLike = None,
    path: str = "direct",
    constellation: Union[str, np.ndarray] = "qpsk",
) -> ChannelVector:
    """
    Draw the sparse measurement h_s.

    The direct path returns Σ β_k a(τ_k, α_k) + z with circular complex
    Gaussian z of variance σ² per element. The full_tx_rx path modulates
    random unit-modulus symbols X, forms Y = H⊙X + Z on the N×M grid and
    divides by X on Ω_s; both paths agree in distribution.

    Args:
        scene: Targets and noise power
        rs: Occupied resources
        config: Grid constants
        seed: RNG seed or generator
        path: 'direct' or 'full_tx_rx'
        constellation: Symbol alphabet for the full path

    Returns:
        ChannelVector aligned with rs
    """
    if path not in PATHS:
        raise ValueError(f"Unknown channel path '{path}'. Valid: {', '.join(PATHS)}")
    if (rs.n_subcarriers, rs.n_symbols) != config.shape:
        raise ValueError(f"resource set grid {(rs.n_subcarriers, rs.n_symbols)} does not match {config.shape}")
    for target in scene.targets:
        target.check_spans(config)

    rng = _rng(seed)

    if path == "direct":
        if scene.targets:
            delays = [t.delay for t in scene.targets]
            dopplers = [t.doppler for t in scene.targets]
            gains = np.array([t.gain for t in scene.targets])
            h = atom_matrix(config, rs, delays, dopplers) @ gains
        else:
            h = np.zeros(len(rs), dtype=np.complex128)
        if scene.noise_power > 0:
            h = h + _complex_noise(rng, len(rs), scene.noise_power)
        return ChannelVector(h, rs)

    X = modulation_grid(rs, constellation, rng)
    Y = channel_matrix(config, scene.targets) * X.to_grid()
    if scene.noise_power > 0:
        Y = Y + _complex_noise(rng, config.shape, scene.noise_power)
    h = compress_from_grid(Y, rs) / X.symbols
    return ChannelVector(h, rs)


def scene_from_snr(
    targets: Sequence[TargetTruth], snr_db: float, snr_reference: Optional[int] = None
) -> Scene:
    """Scene whose noise power gives the requested SNR against the reference target."""
    scene = Scene(tuple(targets), 0.0, snr_reference)
    ref = scene.reference_target
    if ref is None:
        raise ValueError("an SNR needs at least one target")
    return Scene(tuple(targets), ref.power / float(db_to_linear(snr_db)), snr_reference)


def swpr_db(strong: TargetTruth, weak: TargetTruth) -> float:
    """Strong-to-weak peak power ratio 10·log10(|β_s|²/|β_w|²)."""
    return float(10.0 * np.log10(strong.power / weak.power))


def weak_gain_for_swpr(strong_gain: complex, swpr: float, phase: float = 0.0) -> complex:
    """Gain of the weak target for an SWPR in dB, with the given phase."""
    return abs(strong_gain) * 10.0 ** (-swpr / 20.0) * np.exp(1j * phase)
