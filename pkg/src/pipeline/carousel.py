"""
Rotating-target emulator.

Two spheres sit on opposite ends of a beam of radius r turning at a fixed
rate. To first order the bi-static path of sphere i is
L_i(t) = L0 ± 2r·cos θ(t), θ(t) = θ0 + ωt, which gives delay L_i/c and
Doppler shift ±2rω·sin θ(t)/λ. The synthesized channel keeps the exact
per-subcarrier phase e^{-j2π(f_c + nΔf)τ(t_m)}, so range migration and
within-block Doppler drift are present in the data.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.core.types import GridConfig
from src.pipeline.recording import ChannelRecording, RecordingMetadata
from src.scene.resources import SeedLike, _rng

logger = logging.getLogger(__name__)

# gain is proportional to diameter relative to this sphere
REFERENCE_DIAMETER = 0.12


@dataclass(frozen=True)
class CarouselSetup:
    """Sphere size, rotation rate and geometry of one emulator run."""
    name: str
    sphere_diameter: float  # m
    rpm: float
    radius: float = 1.5  # m, beam half-span
    base_path: float = 20.0  # L0, m
    initial_angle: float = math.pi / 4  # θ0, rad
    reference_gain: float = 1.0

    def __post_init__(self):
        for name in ("sphere_diameter", "rpm", "radius", "base_path", "reference_gain"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.base_path <= 2.0 * self.radius:
            raise ValueError(f"base_path ({self.base_path}) must exceed the beam span 2r ({2 * self.radius})")

    @property
    def angular_rate(self) -> float:
        """ω in rad/s."""
        return 2.0 * math.pi * self.rpm / 60.0

    @property
    def gain(self) -> float:
        return self.reference_gain * self.sphere_diameter / REFERENCE_DIAMETER

    @property
    def tangential_speed(self) -> float:
        return self.radius * self.angular_rate


PRESETS: Dict[str, CarouselSetup] = {
    "setup1": CarouselSetup("setup1", 0.06, 60.0),
    "setup2": CarouselSetup("setup2", 0.06, 80.0),
    "setup3": CarouselSetup("setup3", 0.12, 30.0),
    "setup4": CarouselSetup("setup4", 0.12, 60.0),
}


def _paths(setup: CarouselSetup, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Path lengths (T, 2) and their time derivatives (T, 2)."""
    theta = setup.initial_angle + setup.angular_rate * np.asarray(times, dtype=float)
    sign = np.array([1.0, -1.0])
    length = setup.base_path + 2.0 * setup.radius * np.cos(theta)[:, None] * sign
    rate = -2.0 * setup.radius * setup.angular_rate * np.sin(theta)[:, None] * sign
    return length, rate


def carousel_truth(
    setup: CarouselSetup, config: GridConfig, times: Sequence[float]
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Analytic (delay, Doppler) of both spheres.

    Returns:
        delays, dopplers, each of shape (len(times), 2)
    """
    length, rate = _paths(setup, np.atleast_1d(times))
    return length / config.light_speed, -rate / config.wavelength


def synthesize_carousel_recording(
    setup: CarouselSetup,
    metadata: RecordingMetadata,
    n_subcarriers: int,
    n_symbols: int,
    noise_power: float = 0.01,
    clutter: Sequence[Tuple[float, complex]] = ((10.0, 3.0),),
    seed: SeedLike = None,
) -> ChannelRecording:
    """
    Emulated N×M_total channel matrix of the rotating spheres.

    Args:
        setup: Emulator geometry and rate
        metadata: Δf, T_o, f_c and start time
        n_subcarriers: N
        n_symbols: M_total
        noise_power: σ² per element
        clutter: Static reflectors as (path length m, complex gain)
        seed: RNG seed or generator

    Returns:
        ChannelRecording carrying the metadata
    """
    if noise_power < 0:
        raise ValueError(f"noise_power must be >= 0, got {noise_power}")
    config = metadata.grid_config(n_subcarriers, max(n_symbols, 2))
    times = metadata.start_time + np.arange(n_symbols) * metadata.symbol_duration
    freqs = metadata.carrier_freq + np.arange(n_subcarriers) * metadata.subcarrier_spacing

    length, _ = _paths(setup, times)
    delays = length / config.light_speed  # (M_total, 2)
    H = np.zeros((n_subcarriers, n_symbols), dtype=np.complex128)
    for i in range(2):
        H += setup.gain * np.exp(-2j * np.pi * freqs[:, None] * delays[None, :, i])
    for path_length, gain in clutter:
        tau = path_length / config.light_speed
        H += complex(gain) * np.exp(-2j * np.pi * freqs * tau)[:, None]

    if noise_power > 0:
        rng = _rng(seed)
        scale = math.sqrt(noise_power / 2.0)
        H += scale * (rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape))

    logger.info(
        f"Synthesized {setup.name}: {n_subcarriers}x{n_symbols}, {setup.rpm:g} rpm, "
        f"sphere {setup.sphere_diameter * 100:g} cm, {len(clutter)} static reflectors"
    )
    return ChannelRecording(H, metadata)


def block_truth(
    setup: CarouselSetup, metadata: RecordingMetadata, n_subcarriers: int, block_len: int, n_blocks: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic (delay, Doppler) of both spheres at each block centre, shape (n_blocks, 2)."""
    config = metadata.grid_config(n_subcarriers, block_len)
    centres = metadata.start_time + (np.arange(n_blocks) * block_len + 0.5 * (block_len - 1)) * metadata.symbol_duration
    return carousel_truth(setup, config, centres)


def preset(name: str, **overrides) -> CarouselSetup:
    """A named preset, optionally with fields replaced."""
    if name not in PRESETS:
        raise ValueError(f"Unknown carousel preset '{name}'. Valid: {', '.join(PRESETS)}")
    return replace(PRESETS[name], **overrides) if overrides else PRESETS[name]
