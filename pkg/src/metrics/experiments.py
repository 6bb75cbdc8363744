"""
Seeded Monte-Carlo studies.

Every trial draws its own resource set, targets and noise from
numpy.random.default_rng([seed, point, trial]) so results do not depend on
thread scheduling. Per-trial records are aggregated per sweep point and
detector label.
"""
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.baseline.periodogram import extract_peaks, fft2d_detect, periodogram
from src.core.time_utils import format_elapsed, median_wall_time
from src.core.types import (
    ChannelVector,
    Detection,
    DetectionSet,
    GridConfig,
    Provenance,
    ResourceMode,
    ResourceSet,
    Scene,
    TargetTruth,
)
from src.core.utils import circular_difference, wrap_cells, wrap_centered
from src.metrics.association import DEFAULT_GATES, associate, rmse
from src.metrics.crb import CrbParams, crb, crb_exact
from src.recovery.detectors import DetectorConfig, nomp_detect, omp_detect
from src.scene.channel import scene_from_snr, synthesize_channel, weak_gain_for_swpr
from src.scene.resources import select_resources

logger = logging.getLogger(__name__)

SCENARIOS = ("pod_vs_swpr", "rmse_vs_snr", "resolution_pair", "convergence", "timing")
DETECTORS = ("nomp", "omp", "fft2d", "oracle")

_MAX_PLACEMENT_TRIES = 1000

# a close pair counts as resolved only with both estimates this close, in cells
RESOLUTION_GATES = (0.05, 0.05)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a study needs besides scenario, trial count and seed."""
    grid: GridConfig
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    resource_mode: ResourceMode = ResourceMode.ELEMENTWISE
    occupancy: Optional[float] = 0.1
    n_sub_used: Optional[int] = None
    n_sym_used: Optional[int] = None
    detectors: Tuple[str, ...] = ()  # scenario default when empty
    sweep: Tuple[float, ...] = ()  # scenario default when empty
    snr_db: float = 20.0
    range_span: Optional[Tuple[float, float]] = None  # m, full unambiguous span when None
    velocity_span: Optional[Tuple[float, float]] = None  # m/s
    resolution_axis: str = "delay"
    refinement_sweep: Tuple[int, ...] = (5, 10)
    n_targets: int = 6  # convergence study
    timing_repeats: int = 20
    gates: Tuple[float, float] = DEFAULT_GATES
    known_noise: bool = True
    path: str = "direct"
    constellation: str = "qpsk"
    threads: int = 1
    progress: bool = False
    keep_trials: bool = False

    def __post_init__(self):
        object.__setattr__(self, "resource_mode", ResourceMode(self.resource_mode))
        for name in ("detectors", "sweep", "refinement_sweep", "gates"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        errors = []
        unknown = [d for d in self.detectors if d not in DETECTORS]
        if unknown:
            errors.append(f"unknown detectors {unknown}, valid: {', '.join(DETECTORS)}")
        if not math.isfinite(self.snr_db):
            errors.append(f"snr_db must be finite, got {self.snr_db}")
        if self.resolution_axis not in ("delay", "doppler"):
            errors.append(f"resolution_axis must be 'delay' or 'doppler', got '{self.resolution_axis}'")
        if any(r < 0 for r in self.refinement_sweep):
            errors.append(f"refinement_sweep entries must be >= 0, got {self.refinement_sweep}")
        if self.n_targets < 1:
            errors.append(f"n_targets must be >= 1, got {self.n_targets}")
        if self.timing_repeats < 1:
            errors.append(f"timing_repeats must be >= 1, got {self.timing_repeats}")
        if self.threads < 1:
            errors.append(f"threads must be >= 1, got {self.threads}")
        for name, span in (("range_span", self.range_span), ("velocity_span", self.velocity_span)):
            if span is not None and (len(span) != 2 or not span[0] < span[1]):
                errors.append(f"{name} must be (low, high) with low < high, got {span}")
        if errors:
            raise ValueError("Experiment configuration validation failed:\n" + "\n".join(f"  - {e}" for e in errors))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["resource_mode"] = self.resource_mode.value
        return data


@dataclass
class ExperimentReport:
    """
    Aggregated study results.

    records holds one row per (sweep point, detector label); traces holds
    mean normalized residual-energy curves for the convergence study.
    """
    scenario: str
    axis: str
    axis_values: Tuple[float, ...]
    records: List[Dict[str, Any]]
    seed: int
    trials: int
    config: Dict[str, Any]
    traces: Dict[str, List[float]] = field(default_factory=dict)
    trial_records: Optional[List[Dict[str, Any]]] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "scenario": self.scenario,
            "axis": self.axis,
            "axis_values": list(self.axis_values),
            "seed": self.seed,
            "trials": self.trials,
            "config": self.config,
            "series": self.records,
            "traces": self.traces,
        }
        if self.trial_records is not None:
            data["trial_records"] = self.trial_records
        return data

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, default=_json_default)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(self.records)

    def series(self, detector: str, column: str) -> np.ndarray:
        """Column values of one detector label, in sweep order."""
        frame = self.to_frame()
        return frame.loc[frame["detector"] == detector].sort_values("point")[column].to_numpy(dtype=float)

    def export_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        return path

    def export_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


class _Trial(NamedTuple):
    grid: GridConfig
    rs: ResourceSet
    scene: Scene
    measurement: ChannelVector
    det: DetectorConfig


# ---------------------------------------------------------------------------
# detector registry

def _run_nomp(trial: _Trial, k: Optional[int], peak_fraction: Optional[float]) -> DetectionSet:
    return nomp_detect(trial.measurement, trial.rs, trial.grid, trial.det, k_known=k)


def _run_omp(trial: _Trial, k: Optional[int], peak_fraction: Optional[float]) -> DetectionSet:
    return omp_detect(trial.measurement, trial.rs, trial.grid, trial.det, k_known=k)


def _run_fft2d(trial: _Trial, k: Optional[int], peak_fraction: Optional[float]) -> DetectionSet:
    if peak_fraction is None:
        return fft2d_detect(trial.measurement, trial.rs, trial.grid, trial.det, k_known=k)
    # peaks within peak_fraction of the strongest one
    rd_map = periodogram(trial.measurement, trial.rs, trial.grid, trial.det.oversampling)
    return extract_peaks(rd_map, threshold=max(peak_fraction * float(rd_map.magnitudes.max()), np.finfo(float).tiny))


def _run_oracle(trial: _Trial, k: Optional[int], peak_fraction: Optional[float]) -> DetectionSet:
    detections = tuple(
        Detection(t.delay, t.doppler, t.gain, Provenance.GLOBALLY_REFINED) for t in trial.scene.targets
    )
    return DetectionSet(detections, iterations=len(detections))


DETECTOR_REGISTRY: Dict[str, Callable[[_Trial, Optional[int], Optional[float]], DetectionSet]] = {
    "nomp": _run_nomp,
    "omp": _run_omp,
    "fft2d": _run_fft2d,
    "oracle": _run_oracle,
}


# ---------------------------------------------------------------------------
# scene drawing

def _delay_bounds(cfg: ExperimentConfig, grid: GridConfig) -> Tuple[float, float]:
    if cfg.range_span is None:
        return 0.0, grid.delay_span
    low, high = (r / grid.light_speed for r in cfg.range_span)
    if low < 0 or high > grid.delay_span:
        raise ValueError(f"range_span {cfg.range_span} exceeds the unambiguous range")
    return low, high


def _doppler_bounds(cfg: ExperimentConfig, grid: GridConfig) -> Tuple[float, float]:
    half = 0.5 * grid.doppler_span
    if cfg.velocity_span is None:
        return -half, half
    low, high = (2.0 * v / grid.wavelength for v in cfg.velocity_span)
    if low < -half or high > half:
        raise ValueError(f"velocity_span {cfg.velocity_span} exceeds the unambiguous velocity")
    return low, high


def _random_phase(rng: np.random.Generator) -> complex:
    return complex(np.exp(2j * np.pi * rng.uniform()))


def _cell_offset(grid: GridConfig, a: Tuple[float, float], b: Tuple[float, float]) -> float:
    """Chebyshev distance in resolution cells, circular on both axes."""
    du = circular_difference(a[0] / grid.delay_cell, b[0] / grid.delay_cell, grid.n_subcarriers)
    dw = circular_difference(a[1] / grid.doppler_cell, b[1] / grid.doppler_cell, grid.n_symbols)
    return float(max(abs(du), abs(dw)))


def _draw_positions(
    rng: np.random.Generator, cfg: ExperimentConfig, grid: GridConfig, count: int, min_cells: float
) -> List[Tuple[float, float]]:
    d_lo, d_hi = _delay_bounds(cfg, grid)
    a_lo, a_hi = _doppler_bounds(cfg, grid)
    positions: List[Tuple[float, float]] = []
    tries = 0
    while len(positions) < count:
        tries += 1
        if tries > _MAX_PLACEMENT_TRIES:
            raise ValueError(f"could not place {count} targets {min_cells} cells apart in the configured spans")
        candidate = (float(rng.uniform(d_lo, d_hi)), float(rng.uniform(a_lo, a_hi)))
        if all(_cell_offset(grid, candidate, p) > min_cells for p in positions):
            positions.append(candidate)
    return positions


def _trial_detector(cfg: ExperimentConfig, scene: Scene) -> DetectorConfig:
    det = cfg.detector
    if cfg.known_noise and det.noise_power is None and scene.noise_power > 0:
        det = replace(det, noise_power=scene.noise_power)
    return det


def _make_trial(
    rng: np.random.Generator, cfg: ExperimentConfig, grid: GridConfig, scene: Scene, rs: ResourceSet
) -> _Trial:
    measurement = synthesize_channel(scene, rs, grid, rng, cfg.path, cfg.constellation)
    return _Trial(grid, rs, scene, measurement, _trial_detector(cfg, scene))


def _draw_resources(rng: np.random.Generator, cfg: ExperimentConfig, grid: GridConfig) -> ResourceSet:
    return select_resources(grid, cfg.resource_mode, cfg.occupancy, cfg.n_sub_used, cfg.n_sym_used, rng)


def _base_record(label: str, result: DetectionSet) -> Dict[str, Any]:
    return {
        "detector": label,
        "iterations": result.iterations,
        "n_detections": len(result),
        "flags": result.flag_names(),
    }


# ---------------------------------------------------------------------------
# scenarios: trial functions return one record per detector label

def _trial_pod_vs_swpr(rng, cfg: ExperimentConfig, swpr: float, detectors: Sequence[str]) -> List[Dict[str, Any]]:
    grid = cfg.grid
    rs = _draw_resources(rng, cfg, grid)
    (d0, a0), (d1, a1) = _draw_positions(rng, cfg, grid, 2, 2.0)
    strong = TargetTruth(d0, a0, _random_phase(rng))
    weak = TargetTruth(d1, a1, weak_gain_for_swpr(strong.gain, swpr, 2.0 * np.pi * rng.uniform()))
    scene = scene_from_snr([strong, weak], cfg.snr_db, snr_reference=0)
    trial = _make_trial(rng, cfg, grid, scene, rs)

    records = []
    for name in detectors:
        # baselines get the true count, NOMP stops on CFAR
        k = None if name == "nomp" else 2
        result = DETECTOR_REGISTRY[name](trial, k, None)
        matching = associate(result, scene.targets, grid, cfg.gates)
        record = _base_record(name, result)
        record.update(
            stop="cfar" if k is None else f"k_known={k}",
            weak_detected=matching.matched(1),
            strong_detected=matching.matched(0),
            false_alarms=len(matching.false_alarms),
        )
        records.append(record)
    return records


def _rmse_labels(cfg: ExperimentConfig, detectors: Sequence[str]) -> List[Tuple[str, str, int]]:
    """(label, detector, refinement steps); NOMP expands over refinement_sweep."""
    labels = []
    for name in detectors:
        if name == "nomp" and cfg.refinement_sweep:
            for steps in cfg.refinement_sweep:
                labels.append((f"nomp_rs{steps}", name, steps))
        else:
            labels.append((name, name, cfg.detector.refinement_steps))
    return labels


def _trial_rmse_vs_snr(rng, cfg: ExperimentConfig, snr_db: float, detectors: Sequence[str]) -> List[Dict[str, Any]]:
    grid = cfg.grid
    rs = _draw_resources(rng, cfg, grid)
    [(delay, doppler)] = _draw_positions(rng, cfg, grid, 1, 0.0)
    truth = TargetTruth(delay, doppler, _random_phase(rng))
    scene = scene_from_snr([truth], snr_db)
    trial = _make_trial(rng, cfg, grid, scene, rs)

    snr = 10.0 ** (snr_db / 10.0)
    try:
        printed = crb(CrbParams.from_grid(grid, rs, snr))
    except ValueError:
        printed = (math.nan, math.nan)
    exact = crb_exact(grid, rs, snr)
    # ungated: a single-target trial always scores its nearest detection
    gates = (0.5 * grid.n_subcarriers, 0.5 * grid.n_symbols)

    records = []
    for label, name, steps in _rmse_labels(cfg, detectors):
        variant = trial._replace(det=replace(trial.det, refinement_steps=steps))
        result = DETECTOR_REGISTRY[name](variant, 1, None)
        matching = associate(result, scene.targets, grid, gates)
        record = _base_record(label, result)
        if matching.pairs:
            delay_err, doppler_err = matching.error_of(0)
            record.update(
                range_error=grid.light_speed * delay_err,
                velocity_error=doppler_err * grid.wavelength / 2.0,
            )
        else:
            record.update(range_error=math.nan, velocity_error=math.nan)
        record.update(
            crb_range_var=printed[0],
            crb_velocity_var=printed[1],
            crb_exact_range_var=exact.range_var,
            crb_exact_velocity_var=exact.velocity_var,
        )
        records.append(record)
    return records


def _trial_resolution_pair(rng, cfg: ExperimentConfig, separation: float, detectors: Sequence[str]) -> List[Dict[str, Any]]:
    grid = cfg.grid
    rs = _draw_resources(rng, cfg, grid)
    [(delay, doppler)] = _draw_positions(rng, cfg, grid, 1, 0.0)
    if cfg.resolution_axis == "delay":
        second = (float(wrap_cells(delay + separation * grid.delay_cell, grid.delay_span)), doppler)
    else:
        second = (delay, float(wrap_centered(doppler + separation * grid.doppler_cell, grid.doppler_span)))
    targets = [
        TargetTruth(delay, doppler, _random_phase(rng)),
        TargetTruth(second[0], second[1], _random_phase(rng)),
    ]
    scene = scene_from_snr(targets, cfg.snr_db)
    trial = _make_trial(rng, cfg, grid, scene, rs)

    records = []
    for name in detectors:
        if name == "fft2d":
            result = DETECTOR_REGISTRY[name](trial, None, 0.5)
        else:
            result = DETECTOR_REGISTRY[name](trial, 2, None)
        matching = associate(result, scene.targets, grid, RESOLUTION_GATES)
        record = _base_record(name, result)
        record.update(resolved=len(result) == 2 and len(matching.pairs) == 2)
        records.append(record)
    return records


def _trial_convergence(rng, cfg: ExperimentConfig, oversampling: float, detectors: Sequence[str]) -> List[Dict[str, Any]]:
    grid = cfg.grid
    rs = _draw_resources(rng, cfg, grid)
    positions = _draw_positions(rng, cfg, grid, cfg.n_targets, 3.0)
    targets = [TargetTruth(d, a, _random_phase(rng)) for d, a in positions]
    scene = scene_from_snr(targets, cfg.snr_db)
    trial = _make_trial(rng, cfg, grid, scene, rs)
    trial = trial._replace(det=replace(trial.det, oversampling=int(oversampling)))

    records = []
    for name in detectors:
        result = DETECTOR_REGISTRY[name](trial, None, 0.5 if name == "fft2d" else None)
        matching = associate(result, scene.targets, grid, cfg.gates)
        record = _base_record(name, result)
        start = result.residual_trace[0] if result.residual_trace else 0.0
        record.update(
            pod=matching.pod,
            false_alarms=len(matching.false_alarms),
            trace=[v / start if start > 0 else 0.0 for v in result.residual_trace],
        )
        records.append(record)
    return records


def _trial_timing(rng, cfg: ExperimentConfig, size: float, detectors: Sequence[str]) -> List[Dict[str, Any]]:
    size = int(size)
    grid = replace(cfg.grid, n_subcarriers=size, n_symbols=size)
    rs = select_resources(grid, ResourceMode.ELEMENTWISE, cfg.occupancy, seed=rng)
    [(delay, doppler)] = _draw_positions(rng, cfg, grid, 1, 0.0)
    scene = scene_from_snr([TargetTruth(delay, doppler, _random_phase(rng))], cfg.snr_db)
    trial = _make_trial(rng, cfg, grid, scene, rs)

    records = []
    for name in detectors:
        if name not in ("nomp", "omp"):
            continue
        for mode in ("fft", "direct"):
            timed = trial._replace(det=replace(trial.det, correlation_mode=mode))
            runner = DETECTOR_REGISTRY[name]
            wall = median_wall_time(lambda: runner(timed, 1, None), repeats=cfg.timing_repeats)
            records.append({
                "detector": f"{name}_{mode}",
                "iterations": 1,
                "n_detections": 1,
                "flags": [],
                "wall_time_s": wall,
                "n_resources": len(rs),
            })
    return records


# ---------------------------------------------------------------------------
# aggregation: one row per (point, label)

def _mean(records: Sequence[Dict[str, Any]], key: str) -> float:
    values = [float(r[key]) for r in records]
    return float(np.mean(values)) if values else math.nan


def _agg_pod_vs_swpr(records):
    return {
        "stop": records[0]["stop"],
        "pod_weak": _mean(records, "weak_detected"),
        "pod_strong": _mean(records, "strong_detected"),
        "mean_false_alarms": _mean(records, "false_alarms"),
        "mean_iterations": _mean(records, "iterations"),
    }


def _agg_rmse_vs_snr(records):
    return {
        "rmse_range_m": rmse(r["range_error"] for r in records),
        "rmse_velocity_mps": rmse(r["velocity_error"] for r in records),
        "crb_range_m": math.sqrt(_mean(records, "crb_range_var")),
        "crb_velocity_mps": math.sqrt(_mean(records, "crb_velocity_var")),
        "crb_exact_range_m": math.sqrt(_mean(records, "crb_exact_range_var")),
        "crb_exact_velocity_mps": math.sqrt(_mean(records, "crb_exact_velocity_var")),
        "mean_iterations": _mean(records, "iterations"),
    }


def _agg_resolution_pair(records):
    return {
        "p_resolved": _mean(records, "resolved"),
        "mean_detections": _mean(records, "n_detections"),
    }


def _agg_convergence(records):
    iterations = [r["iterations"] for r in records]
    return {
        "mean_iterations": float(np.mean(iterations)),
        "median_iterations": float(np.median(iterations)),
        "pod": _mean(records, "pod"),
        "mean_false_alarms": _mean(records, "false_alarms"),
    }


def _agg_timing(records):
    return {
        "wall_time_s": float(np.median([r["wall_time_s"] for r in records])),
        "n_resources": _mean(records, "n_resources"),
    }


def _mean_trace(records) -> List[float]:
    traces = [r["trace"] for r in records if r.get("trace")]
    if not traces:
        return []
    length = max(len(t) for t in traces)
    padded = np.array([t + [t[-1]] * (length - len(t)) for t in traces])
    return padded.mean(axis=0).tolist()


class _Scenario(NamedTuple):
    axis: str
    sweep: Tuple[float, ...]
    detectors: Tuple[str, ...]
    trial: Callable
    aggregate: Callable


SCENARIO_REGISTRY: Dict[str, _Scenario] = {
    "pod_vs_swpr": _Scenario(
        "swpr_db", (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0), ("nomp", "omp", "fft2d"),
        _trial_pod_vs_swpr, _agg_pod_vs_swpr,
    ),
    "rmse_vs_snr": _Scenario(
        "snr_db", (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0), ("nomp", "omp", "fft2d"),
        _trial_rmse_vs_snr, _agg_rmse_vs_snr,
    ),
    "resolution_pair": _Scenario(
        "separation_cells", (0.25, 0.5, 0.75, 1.0, 1.5, 2.0), ("nomp", "omp", "fft2d"),
        _trial_resolution_pair, _agg_resolution_pair,
    ),
    "convergence": _Scenario(
        "oversampling", (1, 4), ("nomp", "omp"),
        _trial_convergence, _agg_convergence,
    ),
    "timing": _Scenario(
        "size", (64, 128, 256), ("nomp",),
        _trial_timing, _agg_timing,
    ),
}


def run_experiment(
    scenario: str,
    cfg: ExperimentConfig,
    trials: int,
    seed: int = 0,
) -> ExperimentReport:
    """
    Run a seeded Monte-Carlo study.

    Args:
        scenario: One of SCENARIOS
        cfg: Grid, detector and study options
        trials: Trials per sweep point (>= 1)
        seed: Base seed; trial t at point p uses default_rng([seed, p, t])

    Returns:
        ExperimentReport; identical inputs give identical reports apart from
        wall-clock columns
    """
    if scenario not in SCENARIO_REGISTRY:
        raise ValueError(f"Unknown scenario '{scenario}'. Valid: {', '.join(SCENARIOS)}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    scenario_def = SCENARIO_REGISTRY[scenario]
    sweep = cfg.sweep or scenario_def.sweep
    detectors = cfg.detectors or scenario_def.detectors

    jobs = [(p, t) for p in range(len(sweep)) for t in range(trials)]

    def run_job(job: Tuple[int, int]) -> List[Dict[str, Any]]:
        point, trial = job
        rng = np.random.default_rng([seed, point, trial])
        out = scenario_def.trial(rng, cfg, sweep[point], detectors)
        for record in out:
            record.update(point=point, trial=trial, axis_value=sweep[point])
        return out

    logger.info(
        f"Running {scenario}: {len(sweep)} points x {trials} trials, "
        f"detectors={','.join(detectors)}, threads={cfg.threads}"
    )
    started = time.perf_counter()
    with tqdm(total=len(jobs), desc=scenario, disable=not cfg.progress) as bar:
        if cfg.threads == 1:
            results = []
            for job in jobs:
                results.append(run_job(job))
                bar.update(1)
        else:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                results = []
                for out in pool.map(run_job, jobs):
                    results.append(out)
                    bar.update(1)
    trial_records = [r for out in results for r in out]

    rows: List[Dict[str, Any]] = []
    traces: Dict[str, List[float]] = {}
    labels = list(dict.fromkeys(r["detector"] for r in trial_records))
    for point, value in enumerate(sweep):
        for label in labels:
            group = [r for r in trial_records if r["point"] == point and r["detector"] == label]
            if not group:
                continue
            row = {"point": point, scenario_def.axis: value, "detector": label, "trials": len(group)}
            row.update(scenario_def.aggregate(group))
            rows.append(row)
            trace = _mean_trace(group)
            if trace:
                traces[f"{label}@{value}"] = trace

    logger.info(f"{scenario} finished in {format_elapsed(time.perf_counter() - started)}")
    return ExperimentReport(
        scenario=scenario,
        axis=scenario_def.axis,
        axis_values=tuple(sweep),
        records=rows,
        seed=seed,
        trials=trials,
        config=cfg.to_dict(),
        traces=traces,
        trial_records=trial_records if cfg.keep_trials else None,
    )
