"""
Run configuration.

A run configuration file is a flat list of ``section.key = value`` lines
with ``#`` comments, parsed by python-dotenv. Targets use indexed keys,
``targets.<i>.<field>``. Values resolve as built-in defaults < config file
< environment (.env) < command-line flags.
"""
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values, load_dotenv

from src.core.types import GridConfig, ResourceMode, Scene, TargetTruth
from src.core.utils import db_to_linear
from src.metrics.experiments import DETECTORS, SCENARIOS, ExperimentConfig
from src.pipeline.carousel import PRESETS
from src.pipeline.recording import FORMATS
from src.recovery.detectors import DetectorConfig
from src.recovery.dictionary import CORRELATION_MODES
from src.recovery.newton import GLOBAL_MODES
from src.scene.channel import CONSTELLATIONS, PATHS
from src.scene.units import range_velocity_to_delay_doppler

logger = logging.getLogger(__name__)

DETECT_DETECTORS = ("nomp", "omp", "fft2d")
SNAPSHOT_NAME = "run_config"


@dataclass
class GridSettings:
    """OFDM grid."""
    n_subcarriers: int = 64
    n_symbols: int = 64
    subcarrier_spacing_hz: float = 5e6
    symbol_duration_s: float = 64e-6
    carrier_freq_hz: float = 5.9e9


@dataclass
class ResourceSettings:
    """Occupied resource draw."""
    mode: str = "elementwise"
    occupancy: float = 0.1
    n_sub_used: Optional[int] = None
    n_sym_used: Optional[int] = None
    seed: Optional[int] = None  # run.seed when None


@dataclass
class TargetSettings:
    """One target; give exactly one of delay/range and one of Doppler/velocity."""
    delay_s: Optional[float] = None
    range_m: Optional[float] = None
    doppler_hz: Optional[float] = None
    velocity_mps: Optional[float] = None
    gain_db: float = 0.0
    phase_rad: float = 0.0


@dataclass
class NoiseSettings:
    """Noise level; sigma2 wins over snr_db when both are set."""
    snr_db: Optional[float] = 20.0
    sigma2: Optional[float] = None


@dataclass
class ChannelSettings:
    path: str = "direct"
    constellation: str = "qpsk"


@dataclass
class DetectorSettings:
    """Detector choice and parameters."""
    name: str = "nomp"
    refinement_steps: int = 5
    false_alarm_prob: float = 0.01
    oversampling: int = 4
    max_detections: int = 16
    global_mode: str = "block_diagonal"
    global_cycles: int = 20
    step_guard: bool = True
    correlation_mode: str = "fft"
    threshold_cells: Optional[int] = None
    k_known: Optional[int] = None
    max_range_m: Optional[float] = None
    max_velocity_mps: Optional[float] = None


@dataclass
class RecordingSettings:
    """Carousel recording synthesis and replay."""
    preset: str = "setup3"
    n_blocks: int = 20
    block_len: int = 200
    forgetting: float = 0.9
    sigma2: float = 0.01
    radius_m: Optional[float] = None
    base_path_m: Optional[float] = None
    format: str = "raw_complex"


@dataclass
class BenchSettings:
    """Monte-Carlo study options."""
    detectors: str = ""  # comma list, scenario default when empty
    sweep: str = ""  # comma list, scenario default when empty
    resolution_axis: str = "delay"
    n_targets: int = 6
    timing_repeats: int = 20
    progress: bool = False


@dataclass
class RunSettings:
    seed: int = 0
    out: str = "out"
    trials: int = 20
    threads: int = 1
    scenario: str = "rmse_vs_snr"
    log_dir: str = "logs"


def _default_targets() -> List[TargetSettings]:
    return [
        TargetSettings(range_m=18.3, velocity_mps=12.4, gain_db=0.0, phase_rad=0.3),
        TargetSettings(range_m=31.7, velocity_mps=-27.9, gain_db=-6.0, phase_rad=1.9),
    ]


@dataclass
class RunConfig:
    """Fully resolved run configuration."""
    grid: GridSettings = field(default_factory=GridSettings)
    resources: ResourceSettings = field(default_factory=ResourceSettings)
    targets: List[TargetSettings] = field(default_factory=_default_targets)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    channel: ChannelSettings = field(default_factory=ChannelSettings)
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    recording: RecordingSettings = field(default_factory=RecordingSettings)
    bench: BenchSettings = field(default_factory=BenchSettings)
    run: RunSettings = field(default_factory=RunSettings)

    # -- library objects -------------------------------------------------

    def grid_config(self) -> GridConfig:
        g = self.grid
        return GridConfig(g.n_subcarriers, g.n_symbols, g.subcarrier_spacing_hz, g.symbol_duration_s, g.carrier_freq_hz)

    def detector_config(self) -> DetectorConfig:
        d = self.detector
        return DetectorConfig(
            refinement_steps=d.refinement_steps,
            false_alarm_prob=d.false_alarm_prob,
            oversampling=d.oversampling,
            max_detections=d.max_detections,
            global_mode=d.global_mode,
            global_cycles=d.global_cycles,
            step_guard=d.step_guard,
            correlation_mode=d.correlation_mode,
            noise_power=self.noise.sigma2,
            threshold_cells=d.threshold_cells,
            max_range=d.max_range_m,
            max_velocity=d.max_velocity_mps,
        )

    def resource_seed(self) -> int:
        return self.resources.seed if self.resources.seed is not None else self.run.seed

    def target_truths(self, grid: GridConfig) -> List[TargetTruth]:
        truths = []
        for t in self.targets:
            delay = t.delay_s
            doppler = t.doppler_hz
            if delay is None:
                delay, _ = range_velocity_to_delay_doppler(grid, t.range_m, 0.0)
            if doppler is None:
                _, doppler = range_velocity_to_delay_doppler(grid, 0.0, t.velocity_mps)
            amplitude = math.sqrt(float(db_to_linear(t.gain_db)))
            truths.append(TargetTruth(delay, doppler, amplitude * complex(math.cos(t.phase_rad), math.sin(t.phase_rad))))
        return truths

    def scene(self, grid: GridConfig) -> Scene:
        """
        Scene with the configured noise.

        snr_db refers to the strongest target, or to a 0 dB reference when
        the scene is empty.
        """
        truths = self.target_truths(grid)
        if self.noise.sigma2 is not None:
            return Scene(tuple(truths), self.noise.sigma2)
        reference = max((t.power for t in truths), default=1.0)
        return Scene(tuple(truths), reference / float(db_to_linear(self.noise.snr_db)))

    def experiment_config(self) -> ExperimentConfig:
        b = self.bench
        return ExperimentConfig(
            grid=self.grid_config(),
            # studies sweep the noise level, so σ² is set per trial
            detector=replace(self.detector_config(), noise_power=None),
            resource_mode=ResourceMode(self.resources.mode),
            occupancy=self.resources.occupancy,
            n_sub_used=self.resources.n_sub_used,
            n_sym_used=self.resources.n_sym_used,
            detectors=_split(b.detectors),
            sweep=tuple(float(v) for v in _split(b.sweep)),
            snr_db=self.noise.snr_db if self.noise.snr_db is not None else 20.0,
            resolution_axis=b.resolution_axis,
            n_targets=b.n_targets,
            timing_repeats=b.timing_repeats,
            path=self.channel.path,
            constellation=self.channel.constellation,
            threads=self.run.threads,
            progress=b.progress,
        )

    # -- flat form ---------------------------------------------------------

    def to_flat(self) -> Dict[str, str]:
        """Every key as the string that parses back to the same value."""
        flat: Dict[str, str] = {}
        for section in _SECTIONS:
            for f in fields(getattr(self, section)):
                flat[f"{section}.{f.name}"] = _format(getattr(getattr(self, section), f.name))
        flat["targets.count"] = str(len(self.targets))
        for i, target in enumerate(self.targets):
            for f in fields(target):
                value = getattr(target, f.name)
                if value is not None:
                    flat[f"targets.{i}.{f.name}"] = _format(value)
        return flat

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_SECTIONS = ("grid", "resources", "noise", "channel", "detector", "recording", "bench", "run")
_SECTION_TYPES = {
    "grid": GridSettings,
    "resources": ResourceSettings,
    "noise": NoiseSettings,
    "channel": ChannelSettings,
    "detector": DetectorSettings,
    "recording": RecordingSettings,
    "bench": BenchSettings,
    "run": RunSettings,
}

# environment variable -> config key
ENV_KEYS = {
    "LOG_DIR": "run.log_dir",
    "SPARSE_OFDM_THREADS": "run.threads",
    "SPARSE_OFDM_SEED": "run.seed",
}


def _split(value: str) -> Tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got '{text}'")


def _parser_for(annotation) -> Tuple[Callable[[str], Any], bool]:
    """(converter, optional) for a dataclass field annotation."""
    optional = getattr(annotation, "__origin__", None) is Union and type(None) in annotation.__args__
    base = annotation.__args__[0] if optional else annotation
    if base is bool:
        return _parse_bool, optional
    if base is int:
        return _parse_int, optional
    if base is float:
        return float, optional
    return str, optional


def _parse_int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got '{text}'")
    return int(value)


def _convert(annotation, text: str) -> Any:
    parse, optional = _parser_for(annotation)
    if optional and text.strip().lower() in ("", "none", "null"):
        return None
    return parse(text.strip())


def _field_types(cls) -> Dict[str, Any]:
    return {f.name: f.type for f in fields(cls)}


def from_flat(flat: Mapping[str, Optional[str]]) -> RunConfig:
    """
    Build a RunConfig from flat keys.

    Raises:
        ValueError: Listing every unknown key and unparsable value
    """
    errors: List[str] = []
    sections: Dict[str, Dict[str, Any]] = {s: {} for s in _SECTIONS}
    target_values: Dict[int, Dict[str, Any]] = {}
    target_count: Optional[int] = None

    for key, raw in flat.items():
        text = "" if raw is None else str(raw)
        parts = key.strip().split(".")
        try:
            if parts[0] == "targets":
                if len(parts) == 2 and parts[1] == "count":
                    target_count = int(text)
                    if target_count < 0:
                        raise ValueError(f"must be >= 0, got {target_count}")
                    continue
                if len(parts) != 3 or not parts[1].isdigit():
                    raise KeyError(key)
                types = _field_types(TargetSettings)
                if parts[2] not in types:
                    raise KeyError(key)
                target_values.setdefault(int(parts[1]), {})[parts[2]] = _convert(types[parts[2]], text)
            elif len(parts) == 2 and parts[0] in sections:
                types = _field_types(_SECTION_TYPES[parts[0]])
                if parts[1] not in types:
                    raise KeyError(key)
                sections[parts[0]][parts[1]] = _convert(types[parts[1]], text)
            else:
                raise KeyError(key)
        except KeyError:
            errors.append(f"unknown key '{key}'")
        except ValueError as e:
            errors.append(f"{key}: {e}")

    if target_values or target_count is not None:
        count = target_count if target_count is not None else (max(target_values) + 1 if target_values else 0)
        missing = [i for i in range(count) if i not in target_values]
        extra = [i for i in target_values if i >= count]
        if missing:
            errors.append(f"targets {missing} are declared by targets.count but have no keys")
        if extra:
            errors.append(f"targets {extra} exceed targets.count = {count}")
        targets = [TargetSettings(**target_values.get(i, {})) for i in range(count)]
    else:
        targets = _default_targets()

    if errors:
        raise ValueError("Configuration parsing failed:\n" + "\n".join(f"  - {e}" for e in errors))

    return RunConfig(
        targets=targets,
        **{s: _SECTION_TYPES[s](**sections[s]) for s in _SECTIONS},
    )


def _environment_overrides() -> Dict[str, str]:
    return {key: os.environ[env] for env, key in ENV_KEYS.items() if os.environ.get(env)}


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    use_env: bool = True,
) -> RunConfig:
    """
    Resolve the run configuration.

    Args:
        path: Config file (flat key = value lines); defaults only when None
        overrides: Flat keys from command-line flags
        use_env: Read .env and the process environment

    Returns:
        Validated RunConfig

    Raises:
        FileNotFoundError: path does not exist
        ValueError: Unknown keys, bad values or an inconsistent configuration
    """
    if use_env and Path(".env").exists():
        load_dotenv()
        logger.debug("Loaded environment from .env file")

    defaults = RunConfig().to_flat()
    file_values: Dict[str, Optional[str]] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        file_values = dict(dotenv_values(path))
        logger.info(f"Loaded configuration from {path} ({len(file_values)} keys)")

    flag_values = {k: v if isinstance(v, str) else _format(v) for k, v in (overrides or {}).items() if v is not None}
    layers = [file_values, _environment_overrides() if use_env else {}, flag_values]

    # naming any target replaces the default target list
    if any(k.startswith("targets.") for layer in layers for k in layer):
        defaults = {k: v for k, v in defaults.items() if not k.startswith("targets.")}

    flat: Dict[str, Optional[str]] = dict(defaults)
    for layer in layers:
        flat.update(layer)

    config = from_flat(flat)
    validate_run_config(config)
    return config


def validate_run_config(config: RunConfig) -> None:
    """
    Check every section; all problems are reported together.

    Raises:
        ValueError: If any value is out of range or inconsistent
    """
    errors: List[str] = []

    grid = None
    try:
        grid = config.grid_config()
    except ValueError as e:
        errors.append(str(e))

    r = config.resources
    if r.mode not in [m.value for m in ResourceMode]:
        errors.append(f"resources.mode must be elementwise or structured, got '{r.mode}'")
    elif r.mode == "elementwise":
        if not (0.0 < r.occupancy <= 1.0):
            errors.append(f"resources.occupancy must be in (0, 1], got {r.occupancy}")
        elif grid is not None and math.floor(r.occupancy * grid.n_subcarriers * grid.n_symbols + 1e-9) < 1:
            errors.append(f"resources.occupancy {r.occupancy} selects no cells")
    else:
        if r.n_sub_used is None or r.n_sym_used is None:
            errors.append("structured resources need resources.n_sub_used and resources.n_sym_used")
        elif grid is not None and not (1 <= r.n_sub_used <= grid.n_subcarriers and 1 <= r.n_sym_used <= grid.n_symbols):
            errors.append(f"structured counts ({r.n_sub_used}, {r.n_sym_used}) exceed the grid {grid.shape}")

    for i, t in enumerate(config.targets):
        if (t.delay_s is None) == (t.range_m is None):
            errors.append(f"targets.{i}: give exactly one of delay_s, range_m")
        if (t.doppler_hz is None) == (t.velocity_mps is None):
            errors.append(f"targets.{i}: give exactly one of doppler_hz, velocity_mps")
    if grid is not None and not any(e.startswith("targets.") for e in errors):
        try:
            for truth in config.target_truths(grid):
                truth.check_spans(grid)
        except ValueError as e:
            errors.append(f"targets: {e}")

    n = config.noise
    if n.sigma2 is not None and not n.sigma2 > 0:
        errors.append(f"noise.sigma2 must be > 0, got {n.sigma2}")
    if n.sigma2 is None and (n.snr_db is None or not math.isfinite(n.snr_db)):
        errors.append("noise needs snr_db or sigma2")

    if config.channel.path not in PATHS:
        errors.append(f"channel.path must be one of {PATHS}, got '{config.channel.path}'")
    if config.channel.constellation not in CONSTELLATIONS:
        errors.append(f"channel.constellation must be one of {tuple(CONSTELLATIONS)}, got '{config.channel.constellation}'")

    d = config.detector
    if d.name not in DETECT_DETECTORS:
        errors.append(f"detector.name must be one of {DETECT_DETECTORS}, got '{d.name}'")
    if d.global_mode not in GLOBAL_MODES:
        errors.append(f"detector.global_mode must be one of {GLOBAL_MODES}, got '{d.global_mode}'")
    if d.correlation_mode not in CORRELATION_MODES:
        errors.append(f"detector.correlation_mode must be one of {CORRELATION_MODES}, got '{d.correlation_mode}'")
    if d.k_known is not None and d.k_known < 0:
        errors.append(f"detector.k_known must be >= 0, got {d.k_known}")
    try:
        config.detector_config()
    except ValueError as e:
        errors.append(str(e))

    rec = config.recording
    if rec.n_blocks < 1 or rec.block_len < 2:
        errors.append(f"recording needs n_blocks >= 1 and block_len >= 2, got {rec.n_blocks}, {rec.block_len}")
    if not (0.0 < rec.forgetting < 1.0):
        errors.append(f"recording.forgetting must be in (0, 1), got {rec.forgetting}")
    if rec.sigma2 < 0:
        errors.append(f"recording.sigma2 must be >= 0, got {rec.sigma2}")
    if rec.format not in FORMATS:
        errors.append(f"recording.format must be one of {FORMATS}, got '{rec.format}'")
    if rec.preset not in PRESETS:
        errors.append(f"recording.preset must be one of {tuple(PRESETS)}, got '{rec.preset}'")

    b = config.bench
    unknown = [name for name in _split(b.detectors) if name not in DETECTORS]
    if unknown:
        errors.append(f"bench.detectors has unknown names {unknown}")
    try:
        [float(v) for v in _split(b.sweep)]
    except ValueError:
        errors.append(f"bench.sweep must be a comma list of numbers, got '{b.sweep}'")

    run = config.run
    if run.scenario not in SCENARIOS:
        errors.append(f"run.scenario must be one of {SCENARIOS}, got '{run.scenario}'")
    if run.trials < 1:
        errors.append(f"run.trials must be >= 1, got {run.trials}")
    if run.threads < 1:
        errors.append(f"run.threads must be >= 1, got {run.threads}")
    if run.seed < 0:
        errors.append(f"run.seed must be >= 0, got {run.seed}")

    if errors:
        raise ValueError("Run configuration validation failed:\n" + "\n".join(f"  - {e}" for e in errors))


def write_snapshot(config: RunConfig, out_dir: Union[str, Path], derived: Optional[Dict[str, Any]] = None) -> Tuple[Path, Path]:
    """
    Write run_config.cfg (same grammar as the input) and run_config.json.

    Loading the .cfg back reproduces the run; derived values such as |Ω_s|
    are recorded in the JSON only.
    """
    out_dir = Path(out_dir)
    flat = config.to_flat()
    cfg_path = out_dir / f"{SNAPSHOT_NAME}.cfg"
    lines = ["# resolved run configuration"] + [f"{key} = {flat[key]}" for key in sorted(flat)]
    cfg_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    json_path = out_dir / f"{SNAPSHOT_NAME}.json"
    payload = {"config": config.to_dict(), "derived": derived or {}}
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return cfg_path, json_path
