"""
Greedy sparse detectors: grid OMP and Newtonized OMP.

Both share the coarse stage: correlate the residual against the dictionary,
take the strongest cell and score it against a CFAR threshold.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import lstsq

from src.core.types import (
    ChannelVector,
    Detection,
    DetectionFlag,
    DetectionSet,
    GridConfig,
    Provenance,
    ResourceSet,
)
from src.core.utils import circular_difference, safe_divide
from src.recovery.dictionary import (
    CORRELATION_MODES,
    DictionarySpec,
    correlate_residual,
    ind2sub,
)
from src.recovery.newton import GLOBAL_MODES, refine_global, refine_local
from src.scene.channel import atom_matrix

logger = logging.getLogger(__name__)

# estimates closer than this (in cells, both axes) are the same target
DUPLICATE_CELLS = 1e-3

# residual energy relative to ‖h_s‖² treated as fully explained
RESIDUAL_FLOOR = 1e-16

# relative residual-energy decrease below which refinement cycles stop
CYCLE_TOLERANCE = 1e-6

# fixed-point rounds for the effective cell count
_CALIBRATION_ROUNDS = 8


@dataclass(frozen=True)
class DetectorConfig:
    """Detector parameters."""
    refinement_steps: int = 5  # R_s
    false_alarm_prob: float = 0.01  # p_fa
    oversampling: int = 4  # γ
    max_detections: int = 16
    global_mode: str = "block_diagonal"
    global_cycles: int = 20  # R_c, upper bound on refinement cycles per round
    step_guard: bool = True
    correlation_mode: str = "fft"
    noise_power: Optional[float] = None  # known σ², replaces the median estimate
    threshold_cells: Optional[float] = None  # cells entering δ, calibrated to the dictionary when None
    max_range: Optional[float] = None  # d_max, m
    max_velocity: Optional[float] = None  # v_max, m/s

    def __post_init__(self):
        errors = []
        if self.refinement_steps < 0:
            errors.append(f"refinement_steps must be >= 0, got {self.refinement_steps}")
        if not (0.0 < self.false_alarm_prob < 1.0):
            errors.append(f"false_alarm_prob must be in (0, 1), got {self.false_alarm_prob}")
        if int(self.oversampling) != self.oversampling or self.oversampling < 1:
            errors.append(f"oversampling must be an integer >= 1, got {self.oversampling}")
        if self.max_detections < 1:
            errors.append(f"max_detections must be >= 1, got {self.max_detections}")
        if self.global_mode not in GLOBAL_MODES:
            errors.append(f"global_mode must be one of {GLOBAL_MODES}, got '{self.global_mode}'")
        if self.global_cycles < 1:
            errors.append(f"global_cycles must be >= 1, got {self.global_cycles}")
        if self.correlation_mode not in CORRELATION_MODES:
            errors.append(f"correlation_mode must be one of {CORRELATION_MODES}, got '{self.correlation_mode}'")
        if self.noise_power is not None and not self.noise_power > 0:
            errors.append(f"noise_power must be > 0 when given, got {self.noise_power}")
        if self.threshold_cells is not None and self.threshold_cells < 1:
            errors.append(f"threshold_cells must be >= 1 when given, got {self.threshold_cells}")
        if errors:
            raise ValueError("Detector configuration validation failed:\n" + "\n".join(f"  - {e}" for e in errors))

    def check_resources(self, rs: ResourceSet) -> None:
        if self.max_detections > len(rs):
            raise ValueError(f"max_detections ({self.max_detections}) must be <= |Ω_s| ({len(rs)})")

    def dictionary(self, config: GridConfig) -> DictionarySpec:
        return DictionarySpec.build(config, self.oversampling, self.max_range, self.max_velocity)


class CoarseEstimate(NamedTuple):
    """Strongest dictionary cell of a residual."""
    delay: float
    doppler: float
    gain: complex
    peak_metric: float
    cell: Tuple[int, int]


class GainFit(NamedTuple):
    """Least-squares gains over a detection support."""
    gains: np.ndarray
    rank: int
    rank_deficient: bool


def cfar_threshold(n_resources: float, p_fa: float) -> float:
    """
    CFAR stopping level δ = ln n - ln(-ln(1 - p_fa)).

    Args:
        n_resources: Number of independent test cells (see effective_cells)
        p_fa: False-alarm probability in (0, 1)

    Returns:
        Threshold on the noise-normalized peak |c|² / (σ̂²·‖a‖²)
    """
    if n_resources < 1:
        raise ValueError(f"n_resources must be >= 1, got {n_resources}")
    if not (0.0 < p_fa < 1.0):
        raise ValueError(f"p_fa must be in (0, 1), got {p_fa}")
    return math.log(n_resources) - math.log(-math.log1p(-p_fa))


def estimate_noise_power(values: np.ndarray) -> float:
    """Median-based σ̂² = median(|h|²) / ln 2 (|h|² is exponential under noise)."""
    if values.size == 0:
        return 0.0
    return float(np.median(np.abs(values) ** 2) / math.log(2.0))


def effective_cells(rs: ResourceSet, dictionary: DictionarySpec, p_fa: float) -> float:
    """
    Independent-cell count that calibrates δ to the maximum over the dictionary.

    Under noise the normalized correlation |c|²/(σ²·|Ω_s|) is a unit-mean
    exponential field over the searched delay/Doppler region. The expected
    number of its excursions above δ is close to
        A·ρ·(2δ - 1)·e^{-δ}
    with A the searched area in resolution cells and ρ = √det Λ / 2π, Λ the
    covariance of the phase slopes (2πn/N, 2πm/M) over Ω_s. Feeding
    n = A·ρ·(2δ - 1) into cfar_threshold makes that count equal to
    -ln(1 - p_fa); the fixed point is found by iteration. Never below A.

    Args:
        rs: Resource set the statistic is computed on
        dictionary: Searched grid (its oversampling and truncation set A)
        p_fa: False-alarm probability in (0, 1)

    Returns:
        Count to pass to cfar_threshold
    """
    n_delay, n_doppler = dictionary.shape
    area = n_delay * n_doppler / dictionary.oversampling ** 2
    density = 0.0
    if len(rs) > 1:
        slopes = np.column_stack([
            2.0 * np.pi * rs.subcarriers / rs.n_subcarriers,
            2.0 * np.pi * rs.symbols / rs.n_symbols,
        ])
        det_cov = float(np.linalg.det(np.cov(slopes, rowvar=False, bias=True)))
        density = math.sqrt(max(det_cov, 0.0)) / (2.0 * math.pi)
    n_cells = max(area, 1.0)
    for _ in range(_CALIBRATION_ROUNDS):
        delta = cfar_threshold(n_cells, p_fa)
        n_cells = max(area, area * density * (2.0 * delta - 1.0), 1.0)
    return n_cells


def stop_level(rs: ResourceSet, dictionary: DictionarySpec, det: DetectorConfig) -> float:
    """CFAR level δ for a detector run; threshold_cells overrides the calibrated count."""
    n_cells = det.threshold_cells if det.threshold_cells is not None else effective_cells(
        rs, dictionary, det.false_alarm_prob
    )
    return cfar_threshold(n_cells, det.false_alarm_prob)


def coarse_detect(
    residual: ChannelVector,
    config: GridConfig,
    dictionary: DictionarySpec,
    noise_power: Optional[float] = None,
    mode: str = "fft",
) -> CoarseEstimate:
    """
    Strongest on-grid candidate of a residual.

    Ties in |c|² go to the smallest linear index p + q·N_g. The gain is
    β̂ = a^H h_r / ‖a‖², the metric max|c|² / (σ̂²·‖a‖²) with σ̂² the known
    noise power or the median estimate of the residual.
    """
    c = correlate_residual(residual, config, dictionary, mode)
    power = np.abs(c) ** 2
    index = int(np.argmax(power.ravel(order="F")))
    p, q = ind2sub(index, dictionary.shape[0])
    delay, doppler = dictionary.grid_point(p, q)
    n_res = len(residual)
    gain = complex(c[p, q] / n_res)
    sigma2 = noise_power if noise_power is not None else estimate_noise_power(residual.values)
    metric = safe_divide(float(power[p, q]), sigma2 * n_res, default=0.0)
    return CoarseEstimate(delay, doppler, gain, float(metric), (p, q))


def ls_gains(detections: Sequence[Detection], measurement: ChannelVector, config: GridConfig) -> GainFit:
    """
    Gains b = A† h_s over the detection atoms.

    Solved with an SVD-based least-squares routine; a rank-deficient A gives
    the minimum-norm solution and sets rank_deficient.
    """
    items = list(detections)
    if not items:
        return GainFit(np.zeros(0, dtype=np.complex128), 0, False)
    A = atom_matrix(
        config, measurement.resource_set,
        [d.delay for d in items], [d.doppler for d in items],
    )
    gains, _, rank, _ = lstsq(A, measurement.values, lapack_driver="gelsd")
    deficient = int(rank) < len(items)
    if deficient:
        logger.warning(f"Detection atoms are linearly dependent (rank {rank} < {len(items)}), using minimum-norm gains")
    return GainFit(np.asarray(gains, dtype=np.complex128), int(rank), deficient)


def _residual(measurement: ChannelVector, config: GridConfig, detections: Sequence[Detection]) -> np.ndarray:
    if not detections:
        return measurement.values.copy()
    A = atom_matrix(
        config, measurement.resource_set,
        [d.delay for d in detections], [d.doppler for d in detections],
    )
    return measurement.values - A @ np.array([d.gain for d in detections])


def _find_duplicate(est: Detection, existing: Sequence[Detection], config: GridConfig) -> Optional[int]:
    N, M = config.shape
    for i, other in enumerate(existing):
        du = circular_difference(est.delay / config.delay_cell, other.delay / config.delay_cell, N)
        dw = circular_difference(est.doppler / config.doppler_cell, other.doppler / config.doppler_cell, M)
        if abs(du) < DUPLICATE_CELLS and abs(dw) < DUPLICATE_CELLS:
            return i
    return None


def _check_inputs(measurement: ChannelVector, rs: ResourceSet, config: GridConfig, det: DetectorConfig) -> None:
    if not measurement.resource_set.same_as(rs):
        raise ValueError("measurement is not ordered by the given resource set")
    if (rs.n_subcarriers, rs.n_symbols) != config.shape:
        raise ValueError(f"resource set grid {(rs.n_subcarriers, rs.n_symbols)} does not match {config.shape}")
    det.check_resources(rs)


def _refit(detections: Sequence[Detection], measurement: ChannelVector, config: GridConfig, flags: set) -> List[Detection]:
    fit = ls_gains(detections, measurement, config)
    if fit.rank_deficient:
        flags.add(DetectionFlag.RANK_DEFICIENT)
    return [replace(d, gain=g) for d, g in zip(detections, fit.gains)]


def _refine_cycles(
    detections: Sequence[Detection], measurement: ChannelVector, config: GridConfig, det: DetectorConfig
) -> Tuple[List[Detection], np.ndarray, set]:
    """
    Global refinement cycles: joint Newton update, then least-squares gains.

    Runs until the residual energy decreases by less than CYCLE_TOLERANCE
    relative, or for det.global_cycles cycles. A cycle that raises the
    residual energy is discarded.

    Returns:
        (detections, residual values, raised flags)
    """
    flags: set = set()
    current = _refit(detections, measurement, config, flags)
    residual = _residual(measurement, config, current)
    energy = float(np.vdot(residual, residual).real)

    for cycle in range(det.global_cycles):
        refined = refine_global(DetectionSet(tuple(current)), measurement, config, det.global_mode, det.step_guard)
        flags |= refined.flags
        candidate = _refit(refined.detections, measurement, config, flags)
        cand_residual = _residual(measurement, config, candidate)
        cand_energy = float(np.vdot(cand_residual, cand_residual).real)
        if cand_energy > energy:
            logger.debug(f"Refinement cycle {cycle + 1} raised the residual energy, discarded")
            break
        improvement = energy - cand_energy
        current, residual, energy = candidate, cand_residual, cand_energy
        if improvement <= CYCLE_TOLERANCE * energy:
            logger.debug(f"Refinement cycles converged after {cycle + 1}")
            break
    return current, residual, flags


def nomp_detect(
    measurement: ChannelVector,
    rs: ResourceSet,
    config: GridConfig,
    det: DetectorConfig,
    k_known: Optional[int] = None,
) -> DetectionSet:
    """
    Newtonized OMP.

    Each round: coarse detection on the residual, R_s local Newton steps,
    append, then refinement cycles over all estimates (joint Newton update
    and least-squares gains) until the residual energy settles, residual
    update. Stops when the normalized peak falls to δ (or after
    k_known rounds when given), when the residual is numerically exhausted,
    or when a duplicate estimate stalls the loop.

    Args:
        measurement: h_s
        rs: Resource set ordering h_s
        config: Grid constants
        det: Detector parameters
        k_known: Fixed number of targets instead of the CFAR stop

    Returns:
        DetectionSet, provenance globally_refined, residual energy per round
    """
    _check_inputs(measurement, rs, config, det)
    if k_known is not None and k_known < 0:
        raise ValueError(f"k_known must be >= 0, got {k_known}")
    dictionary = det.dictionary(config)
    delta = stop_level(rs, dictionary, det)
    h_energy = measurement.energy

    detections: List[Detection] = []
    flags = set()
    residual = measurement
    trace = [h_energy]
    rounds = 0

    while True:
        if k_known is not None and len(detections) >= k_known:
            break
        if residual.energy <= RESIDUAL_FLOOR * h_energy:
            logger.debug("Residual exhausted, stopping")
            break

        coarse = coarse_detect(residual, config, dictionary, det.noise_power, det.correlation_mode)
        if k_known is None and coarse.peak_metric <= delta:
            break
        if len(detections) >= det.max_detections:
            flags.add(DetectionFlag.TRUNCATED)
            logger.warning(f"max_detections={det.max_detections} reached with peak metric {coarse.peak_metric:.3g} > δ={delta:.3g}")
            break

        est = Detection(coarse.delay, coarse.doppler, coarse.gain, Provenance.COARSE)
        est = refine_local(est, residual, config, det.refinement_steps, det.step_guard)

        dup = _find_duplicate(est, detections, config)
        if dup is not None:
            flags.add(DetectionFlag.STALLED)
            logger.warning(f"Estimate duplicates detection {dup}, stopping")
            if abs(est.gain) > abs(detections[dup].gain):
                detections[dup] = est
                detections = _refit(detections, measurement, config, flags)
            break

        detections.append(est)
        detections, residual_values, cycle_flags = _refine_cycles(detections, measurement, config, det)
        flags |= cycle_flags

        residual = measurement.with_values(residual_values)
        trace.append(residual.energy)
        rounds += 1
        logger.debug(
            f"NOMP round {rounds}: metric={coarse.peak_metric:.3g} δ={delta:.3g} "
            f"residual={trace[-1]:.4g}"
        )

    detections = [replace(d, provenance=Provenance.GLOBALLY_REFINED) for d in detections]
    return DetectionSet(tuple(detections), frozenset(flags), rounds, tuple(trace))


def omp_detect(
    measurement: ChannelVector,
    rs: ResourceSet,
    config: GridConfig,
    det: DetectorConfig,
    k_known: Optional[int] = None,
) -> DetectionSet:
    """
    Grid OMP: match, identify, least-squares update over the support.

    Stops after k_known iterations when given, otherwise on the CFAR rule
    shared with nomp_detect. Estimates stay on dictionary grid points.
    """
    _check_inputs(measurement, rs, config, det)
    if k_known is not None and k_known < 0:
        raise ValueError(f"k_known must be >= 0, got {k_known}")
    dictionary = det.dictionary(config)
    delta = stop_level(rs, dictionary, det)
    h_energy = measurement.energy

    support: List[Tuple[int, int]] = []
    detections: List[Detection] = []
    flags = set()
    residual = measurement
    trace = [h_energy]

    while True:
        if k_known is not None and len(detections) >= k_known:
            break
        if residual.energy <= RESIDUAL_FLOOR * h_energy:
            break
        coarse = coarse_detect(residual, config, dictionary, det.noise_power, det.correlation_mode)
        if k_known is None and coarse.peak_metric <= delta:
            break
        if len(detections) >= det.max_detections:
            flags.add(DetectionFlag.TRUNCATED)
            logger.warning(f"max_detections={det.max_detections} reached with peak metric {coarse.peak_metric:.3g} > δ={delta:.3g}")
            break
        if coarse.cell in support:
            flags.add(DetectionFlag.STALLED)
            logger.warning(f"OMP re-selected cell {coarse.cell}, stopping")
            break

        support.append(coarse.cell)
        detections.append(Detection(coarse.delay, coarse.doppler, coarse.gain, Provenance.COARSE))
        detections = _refit(detections, measurement, config, flags)
        residual = measurement.with_values(_residual(measurement, config, detections))
        trace.append(residual.energy)

    return DetectionSet(tuple(detections), frozenset(flags), len(detections), tuple(trace))
