"""
Core type definitions for the sensing library.
Follows PEP8 with type hints.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, Iterator, List, Optional, Tuple

import numpy as np
from scipy.constants import speed_of_light

from src.core.utils import is_bad_number


class Provenance(Enum):
    """Which detector stage produced an estimate."""
    COARSE = "coarse"
    LOCALLY_REFINED = "locally_refined"
    GLOBALLY_REFINED = "globally_refined"


class DetectionFlag(Enum):
    """Recoverable conditions raised while detecting."""
    TRUNCATED = "truncated"            # max_detections hit with the peak still above threshold
    STALLED = "stalled"                # duplicate estimate merged, loop stopped
    RANK_DEFICIENT = "rank_deficient"  # least-squares gains fell back to minimum norm
    SINGULAR_BLOCK = "singular_block"  # a global Newton block was skipped
    BLOCK_FALLBACK = "block_fallback"  # full block system not definite, block-diagonal used
    SHORT = "short"                    # fewer peaks than requested


class ResourceMode(Enum):
    """How the occupied resource set was drawn."""
    ELEMENTWISE = "elementwise"
    STRUCTURED = "structured"


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GridConfig:
    """OFDM grid dimensions and physical constants."""
    n_subcarriers: int
    n_symbols: int
    subcarrier_spacing: float  # Hz
    symbol_duration: float  # s, cyclic prefix included
    carrier_freq: float  # Hz
    wavelength: Optional[float] = None  # m, derived from c / f_c when omitted
    light_speed: float = speed_of_light

    def __post_init__(self):
        errors = []
        if int(self.n_subcarriers) != self.n_subcarriers or self.n_subcarriers < 2:
            errors.append(f"n_subcarriers must be an integer >= 2, got {self.n_subcarriers}")
        if int(self.n_symbols) != self.n_symbols or self.n_symbols < 2:
            errors.append(f"n_symbols must be an integer >= 2, got {self.n_symbols}")
        if is_bad_number(self.subcarrier_spacing) or self.subcarrier_spacing <= 0:
            errors.append(f"subcarrier_spacing must be > 0, got {self.subcarrier_spacing}")
        elif is_bad_number(self.symbol_duration) or self.symbol_duration * self.subcarrier_spacing < 1.0 - 1e-12:
            errors.append(
                f"symbol_duration must be >= 1/subcarrier_spacing "
                f"({1.0 / self.subcarrier_spacing:.6g} s), got {self.symbol_duration}"
            )
        if is_bad_number(self.carrier_freq) or self.carrier_freq <= 0:
            errors.append(f"carrier_freq must be > 0, got {self.carrier_freq}")
        if is_bad_number(self.light_speed) or self.light_speed <= 0:
            errors.append(f"light_speed must be > 0, got {self.light_speed}")
        if errors:
            raise ValueError("Invalid grid configuration:\n" + "\n".join(f"  - {e}" for e in errors))

        if self.wavelength is None:
            object.__setattr__(self, "wavelength", self.light_speed / self.carrier_freq)
        elif abs(self.wavelength * self.carrier_freq - self.light_speed) > 1e-12 * self.light_speed:
            raise ValueError(
                f"wavelength * carrier_freq must equal light_speed, got "
                f"{self.wavelength} * {self.carrier_freq} != {self.light_speed}"
            )
        object.__setattr__(self, "n_subcarriers", int(self.n_subcarriers))
        object.__setattr__(self, "n_symbols", int(self.n_symbols))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n_subcarriers, self.n_symbols

    @property
    def delay_span(self) -> float:
        """Unambiguous delay span 1/Δf."""
        return 1.0 / self.subcarrier_spacing

    @property
    def doppler_span(self) -> float:
        """Unambiguous Doppler span 1/T_o, centred on zero."""
        return 1.0 / self.symbol_duration

    @property
    def delay_cell(self) -> float:
        """Delay resolution 1/(NΔf)."""
        return 1.0 / (self.n_subcarriers * self.subcarrier_spacing)

    @property
    def doppler_cell(self) -> float:
        """Doppler resolution 1/(MT_o)."""
        return 1.0 / (self.n_symbols * self.symbol_duration)

    @property
    def bandwidth(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing


@dataclass(frozen=True, eq=False)
class ResourceSet:
    """
    Occupied resource elements Ω_s inside an N×M grid.

    The row order of ``indices`` is fixed at construction and is the element
    order of every channel vector and atom built on this set.
    """
    indices: np.ndarray  # (|Ω_s|, 2) int, columns (n, m)
    n_subcarriers: int
    n_symbols: int
    mode: ResourceMode = ResourceMode.ELEMENTWISE
    per_symbol_subcarriers: Optional[int] = None

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 2 or idx.shape[1] != 2:
            raise ValueError(f"indices must have shape (K, 2), got {idx.shape}")
        if idx.shape[0] == 0:
            raise ValueError("resource set must not be empty")
        if not np.issubdtype(idx.dtype, np.integer):
            if not np.all(np.equal(np.mod(idx, 1), 0)):
                raise ValueError("resource indices must be integers")
        idx = idx.astype(np.int64)
        n, m = idx[:, 0], idx[:, 1]
        if n.min() < 0 or n.max() >= self.n_subcarriers or m.min() < 0 or m.max() >= self.n_symbols:
            raise ValueError(
                f"resource indices must lie inside the {self.n_subcarriers}x{self.n_symbols} grid"
            )
        linear = n + m * self.n_subcarriers
        if np.unique(linear).size != linear.size:
            raise ValueError("resource set contains duplicate (n, m) pairs")
        object.__setattr__(self, "indices", _readonly(idx))

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    @property
    def size(self) -> int:
        return len(self)

    @property
    def subcarriers(self) -> np.ndarray:
        return self.indices[:, 0]

    @property
    def symbols(self) -> np.ndarray:
        return self.indices[:, 1]

    @property
    def linear_indices(self) -> np.ndarray:
        """Column-major positions n + m·N inside the grid."""
        return self.subcarriers + self.symbols * self.n_subcarriers

    @property
    def occupancy(self) -> float:
        """η = |Ω_s| / (N·M)."""
        return len(self) / float(self.n_subcarriers * self.n_symbols)

    @property
    def n_sub_used(self) -> int:
        """Occupied subcarrier count (per symbol when structured, distinct otherwise)."""
        if self.per_symbol_subcarriers is not None:
            return int(self.per_symbol_subcarriers)
        return int(np.unique(self.subcarriers).size)

    @property
    def n_sym_used(self) -> int:
        return int(np.unique(self.symbols).size)

    def same_as(self, other: "ResourceSet") -> bool:
        return (
            self.n_subcarriers == other.n_subcarriers
            and self.n_symbols == other.n_symbols
            and np.array_equal(self.indices, other.indices)
        )


@dataclass(frozen=True)
class TargetTruth:
    """One point scatterer: bi-static delay, Doppler shift and complex gain."""
    delay: float  # s
    doppler: float  # Hz
    gain: complex = 1.0 + 0.0j

    def __post_init__(self):
        if is_bad_number(self.delay) or is_bad_number(self.doppler):
            raise ValueError(f"target delay/doppler must be finite, got ({self.delay}, {self.doppler})")
        gain = complex(self.gain)
        if not np.isfinite(gain) or abs(gain) <= 0:
            raise ValueError(f"target gain must be finite and nonzero, got {self.gain}")
        object.__setattr__(self, "gain", gain)

    @property
    def power(self) -> float:
        return abs(self.gain) ** 2

    def check_spans(self, config: GridConfig) -> None:
        """Raise ValueError when the target falls outside the unambiguous spans."""
        if not (0.0 <= self.delay < config.delay_span):
            raise ValueError(f"delay {self.delay} outside [0, {config.delay_span})")
        half = 0.5 * config.doppler_span
        if not (-half <= self.doppler < half):
            raise ValueError(f"doppler {self.doppler} outside [{-half}, {half})")


@dataclass(frozen=True)
class Scene:
    """Targets plus per-element noise power."""
    targets: Tuple[TargetTruth, ...] = ()
    noise_power: float = 0.0
    snr_reference: Optional[int] = None  # index into targets, strongest when None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if is_bad_number(self.noise_power) or self.noise_power < 0:
            raise ValueError(f"noise_power must be >= 0, got {self.noise_power}")
        if self.snr_reference is not None and not (0 <= self.snr_reference < len(self.targets)):
            raise ValueError(f"snr_reference {self.snr_reference} out of range for {len(self.targets)} targets")

    @property
    def reference_target(self) -> Optional[TargetTruth]:
        if not self.targets:
            return None
        if self.snr_reference is not None:
            return self.targets[self.snr_reference]
        return max(self.targets, key=lambda t: t.power)

    @property
    def snr(self) -> float:
        """|β_ref|² / σ² per occupied element (inf for a noiseless scene)."""
        ref = self.reference_target
        if ref is None:
            return 0.0
        if self.noise_power == 0:
            return float("inf")
        return ref.power / self.noise_power


@dataclass(frozen=True, eq=False)
class ChannelVector:
    """Compressed measurement h_s, ordered like its resource set."""
    values: np.ndarray
    resource_set: ResourceSet

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128).reshape(-1)
        if values.size != len(self.resource_set):
            raise ValueError(
                f"channel vector length {values.size} does not match |Ω_s| = {len(self.resource_set)}"
            )
        object.__setattr__(self, "values", _readonly(values.copy()))

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def energy(self) -> float:
        return float(np.vdot(self.values, self.values).real)

    def with_values(self, values: np.ndarray) -> "ChannelVector":
        return ChannelVector(values, self.resource_set)


@dataclass(frozen=True, eq=False)
class ModSymbolGrid:
    """Unit-modulus modulation symbols on Ω_s (zero elsewhere)."""
    symbols: np.ndarray  # in resource-set order
    resource_set: ResourceSet

    def __post_init__(self):
        symbols = np.asarray(self.symbols, dtype=np.complex128).reshape(-1)
        if symbols.size != len(self.resource_set):
            raise ValueError(f"expected {len(self.resource_set)} symbols, got {symbols.size}")
        if np.max(np.abs(np.abs(symbols) - 1.0)) > 1e-12:
            raise ValueError("modulation symbols must be unit modulus")
        object.__setattr__(self, "symbols", _readonly(symbols.copy()))

    def to_grid(self) -> np.ndarray:
        rs = self.resource_set
        grid = np.zeros((rs.n_subcarriers, rs.n_symbols), dtype=np.complex128)
        grid[rs.subcarriers, rs.symbols] = self.symbols
        return grid


@dataclass(frozen=True)
class Detection:
    """One estimated target (τ̂, α̂, β̂)."""
    delay: float
    doppler: float
    gain: complex
    provenance: Provenance = Provenance.COARSE

    def __post_init__(self):
        gain = complex(self.gain)
        if is_bad_number(self.delay) or is_bad_number(self.doppler) or not np.isfinite(gain):
            raise ValueError(f"detection fields must be finite, got ({self.delay}, {self.doppler}, {self.gain})")
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "delay", float(self.delay))
        object.__setattr__(self, "doppler", float(self.doppler))


@dataclass(frozen=True)
class DetectionSet:
    """Detector output: estimates plus run bookkeeping."""
    detections: Tuple[Detection, ...] = ()
    flags: FrozenSet[DetectionFlag] = frozenset()
    iterations: int = 0
    residual_trace: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        object.__setattr__(self, "flags", frozenset(self.flags))
        object.__setattr__(self, "residual_trace", tuple(float(v) for v in self.residual_trace))

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self) -> Iterator[Detection]:
        return iter(self.detections)

    def __getitem__(self, item: int) -> Detection:
        return self.detections[item]

    @property
    def delays(self) -> np.ndarray:
        return np.array([d.delay for d in self.detections], dtype=float)

    @property
    def dopplers(self) -> np.ndarray:
        return np.array([d.doppler for d in self.detections], dtype=float)

    @property
    def gains(self) -> np.ndarray:
        return np.array([d.gain for d in self.detections], dtype=np.complex128)

    def has(self, flag: DetectionFlag) -> bool:
        return flag in self.flags

    @property
    def truncated(self) -> bool:
        return DetectionFlag.TRUNCATED in self.flags

    def flag_names(self) -> List[str]:
        return sorted(f.value for f in self.flags)
