"""
Command-line entry point.

    python -m src.app.cli simulate [--config FILE] [--seed N] [--out DIR]
    python -m src.app.cli detect --detector nomp [--input FILE] [--resources FILE] [--truth FILE]
    python -m src.app.cli bench --scenario rmse_vs_snr --trials 50 [--threads 4]
    python -m src.app.cli bench --list
    python -m src.app.cli synth-recording --preset setup3

Exit codes: 0 success, 2 usage/config error or unwritable output,
3 input-format error, 4 numeric failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.app.config import (
    DETECT_DETECTORS,
    RunConfig,
    load_run_config,
    write_snapshot,
)
from src.baseline.periodogram import fft2d_detect
from src.core.types import ChannelVector, DetectionSet, GridConfig, ResourceSet, TargetTruth
from src.metrics.association import associate
from src.metrics.experiments import SCENARIOS, run_experiment
from src.monitor.logger import StructuredLogger, setup_logging
from src.pipeline.carousel import PRESETS, block_truth, preset, synthesize_carousel_recording
from src.pipeline.processing import BlockResult, process_recording
from src.pipeline.recording import (
    ChannelRecording,
    RecordingFormatError,
    RecordingMetadata,
    load_recording,
    load_resource_set,
    save_recording,
    save_resource_set,
)
from src.recovery.detectors import nomp_detect, omp_detect
from src.scene.channel import synthesize_channel
from src.scene.resources import compress_from_grid, scatter_to_grid, select_resources
from src.scene.units import delay_doppler_to_range_velocity

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4

DETECT_FUNCTIONS: Dict[str, Callable[..., DetectionSet]] = {
    "nomp": nomp_detect,
    "omp": omp_detect,
    "fft2d": fft2d_detect,
}

MEASUREMENT_FILE = "measurement.bin"
RESOURCES_FILE = "resources.csv"
TRUTH_FILE = "truth.json"
RECORDING_FILE = "recording.bin"


# ---------------------------------------------------------------------------
# helpers

def _prepare_out(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / ".write_check"
    marker.write_text("")
    marker.unlink()
    return out


def _write_json(path: Path, payload: Any) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _target_record(grid: GridConfig, delay: float, doppler: float, gain: complex) -> Dict[str, float]:
    distance, velocity = delay_doppler_to_range_velocity(grid, delay, doppler)
    gain = complex(gain)
    return {
        "delay_s": float(delay),
        "doppler_hz": float(doppler),
        "range_m": distance,
        "velocity_mps": velocity,
        "gain_re": gain.real,
        "gain_im": gain.imag,
    }


def _truths_from_json(items: Sequence[Dict[str, float]]) -> List[TargetTruth]:
    return [
        TargetTruth(t["delay_s"], t["doppler_hz"], complex(t.get("gain_re", 1.0), t.get("gain_im", 0.0)))
        for t in items
    ]


def _metadata_from_config(config: RunConfig) -> RecordingMetadata:
    g = config.grid
    return RecordingMetadata(g.subcarrier_spacing_hz, g.symbol_duration_s, g.carrier_freq_hz)


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(config: RunConfig, slog: StructuredLogger) -> List[Path]:
    """Synthesize one measurement: zero-filled grid, Ω_s CSV, ground truth."""
    out = _prepare_out(config.run.out)
    grid = config.grid_config()
    rs = select_resources(
        grid, config.resources.mode, config.resources.occupancy,
        config.resources.n_sub_used, config.resources.n_sym_used, seed=config.resource_seed(),
    )
    scene = config.scene(grid)
    measurement = synthesize_channel(
        scene, rs, grid, seed=[config.run.seed, 1],
        path=config.channel.path, constellation=config.channel.constellation,
    )

    recording = ChannelRecording(scatter_to_grid(measurement.values, rs), _metadata_from_config(config))
    written = [
        save_recording(recording, out / MEASUREMENT_FILE, "raw_complex"),
        save_resource_set(rs, out / RESOURCES_FILE),
        _write_json(out / TRUTH_FILE, {
            "noise_power": scene.noise_power,
            "targets": [_target_record(grid, t.delay, t.doppler, t.gain) for t in scene.targets],
        }),
    ]
    written.extend(write_snapshot(config, out, derived={
        "n_resources": len(rs),
        "n_sub_used": rs.n_sub_used,
        "n_sym_used": rs.n_sym_used,
        "occupancy": rs.occupancy,
    }))
    for path in written:
        slog.log_artifact("simulate", path, path.suffix.lstrip("."))
    logger.info(f"Simulated {len(scene.targets)} targets on |Ω_s|={len(rs)} of {grid.n_subcarriers}x{grid.n_symbols}")
    return written


def _run_blocks(
    config: RunConfig, recording: ChannelRecording, rs: ResourceSet, detector: str
) -> List[BlockResult]:
    """One block when Ω_s spans the whole recording, otherwise the block pipeline."""
    if rs.n_subcarriers != recording.n_subcarriers or rs.n_symbols > recording.n_symbols:
        raise RecordingFormatError(
            f"resource grid {rs.n_subcarriers}x{rs.n_symbols} does not fit the "
            f"{recording.n_subcarriers}x{recording.n_symbols} recording", 0,
        )
    det = config.detector_config()
    fn = DETECT_FUNCTIONS[detector]
    k_known = config.detector.k_known

    if rs.n_symbols < recording.n_symbols:
        return process_recording(recording, rs, det, config.recording.forgetting, k_known, detector=fn)
    grid = recording.metadata.grid_config(rs.n_subcarriers, rs.n_symbols)
    vector = ChannelVector(compress_from_grid(recording.matrix, rs), rs)
    return [BlockResult(0, recording.metadata.start_time, fn(vector, rs, grid, det, k_known=k_known))]


def _block_truths(truth: Dict[str, Any]) -> Dict[int, List[TargetTruth]]:
    if "blocks" in truth:
        return {int(b["index"]): _truths_from_json(b["targets"]) for b in truth["blocks"]}
    if "targets" in truth:
        return {-1: _truths_from_json(truth["targets"])}
    raise ValueError("truth file needs a 'targets' or 'blocks' entry")


def _associate_blocks(
    truth_path: Path, results: Sequence[BlockResult], grid: GridConfig
) -> Dict[str, Any]:
    truths = _block_truths(json.loads(truth_path.read_text(encoding="utf-8")))
    blocks, found, total = [], 0, 0
    for block in results:
        targets = truths.get(block.index, truths.get(-1))
        if targets is None:
            logger.warning(f"No truth for block {block.index}, skipped in association")
            continue
        matching = associate(block.detections, targets, grid)
        found += len(matching.pairs)
        total += matching.n_truths
        blocks.append({
            "index": block.index,
            "pairs": [list(p) for p in matching.pairs],
            "misses": list(matching.misses),
            "false_alarms": list(matching.false_alarms),
            "pod": matching.pod,
        })
    return {"pod": found / total if total else 1.0, "blocks": blocks}


def cmd_detect(
    config: RunConfig,
    slog: StructuredLogger,
    input_path: Optional[str] = None,
    resources_path: Optional[str] = None,
    truth_path: Optional[str] = None,
) -> List[Path]:
    """
    Detect targets in a stored measurement or recording.

    Defaults read measurement.bin and resources.csv from the output
    directory, which is where simulate leaves them.
    """
    out = _prepare_out(config.run.out)
    detector = config.detector.name
    source = Path(input_path) if input_path else out / MEASUREMENT_FILE
    rs_path = Path(resources_path) if resources_path else source.with_name(RESOURCES_FILE)

    recording = load_recording(source)
    if recording.metadata is None:
        logger.warning(f"{source} has no metadata sidecar, using the configured grid constants")
        recording = ChannelRecording(recording.matrix, _metadata_from_config(config))
    rs = load_resource_set(rs_path, recording.n_subcarriers)
    results = _run_blocks(config, recording, rs, detector)
    grid = recording.metadata.grid_config(rs.n_subcarriers, rs.n_symbols)

    blocks, trace_rows = [], []
    for block in results:
        blocks.append({
            "index": block.index,
            "start_time": block.start_time,
            "iterations": block.detections.iterations,
            "flags": block.detections.flag_names(),
            "detections": [
                dict(_target_record(grid, d.delay, d.doppler, d.gain), provenance=d.provenance.value)
                for d in block.detections
            ],
        })
        trace_rows.extend(
            {"block": block.index, "iteration": i, "residual_energy": e}
            for i, e in enumerate(block.detections.residual_trace)
        )
        slog.log_detection_set("detect", block.detections, label=f"{detector} block {block.index}")

    written = [_write_json(out / "detections.json", {"detector": detector, "blocks": blocks})]
    trace_path = out / "residual_trace.csv"
    pd.DataFrame(trace_rows, columns=["block", "iteration", "residual_energy"]).to_csv(trace_path, index=False)
    written.append(trace_path)

    if truth_path:
        association = _associate_blocks(Path(truth_path), results, grid)
        written.append(_write_json(out / "association.json", association))
        logger.info(f"PoD {association['pod']:.3f} over {len(association['blocks'])} blocks")

    written.extend(write_snapshot(config, out, derived={
        "input": str(source),
        "resources": str(rs_path),
        "blocks": len(results),
        "n_resources": len(rs),
    }))
    for path in written:
        slog.log_artifact("detect", path, path.suffix.lstrip("."))
    logger.info(f"{detector}: {sum(len(b.detections) for b in results)} detections over {len(results)} blocks")
    return written


def cmd_bench(config: RunConfig, slog: StructuredLogger) -> List[Path]:
    """Run one Monte-Carlo study and write report.json / report.csv."""
    out = _prepare_out(config.run.out)
    scenario = config.run.scenario
    report = run_experiment(scenario, config.experiment_config(), config.run.trials, seed=config.run.seed)
    for row in report.records:
        slog.log_experiment_point(scenario, row)

    written = [report.export_json(out / "report.json"), report.export_csv(out / "report.csv")]
    written.extend(write_snapshot(config, out, derived={
        "scenario": scenario,
        "axis": report.axis,
        "axis_values": list(report.axis_values),
    }))
    for path in written:
        slog.log_artifact("bench", path, path.suffix.lstrip("."))
    logger.info(f"{scenario}: {len(report.records)} rows, {config.run.trials} trials per point")
    return written


def cmd_synth_recording(config: RunConfig, slog: StructuredLogger) -> List[Path]:
    """Emulated rotating-target recording plus a per-block Ω_s template and truth."""
    out = _prepare_out(config.run.out)
    rec = config.recording
    overrides = {}
    if rec.radius_m is not None:
        overrides["radius"] = rec.radius_m
    if rec.base_path_m is not None:
        overrides["base_path"] = rec.base_path_m
    setup = preset(rec.preset, **overrides)

    metadata = _metadata_from_config(config)
    n_subcarriers = config.grid.n_subcarriers
    recording = synthesize_carousel_recording(
        setup, metadata, n_subcarriers, rec.n_blocks * rec.block_len,
        noise_power=rec.sigma2, seed=[config.run.seed, 2],
    )
    block_grid = metadata.grid_config(n_subcarriers, rec.block_len)
    rs = select_resources(
        block_grid, config.resources.mode, config.resources.occupancy,
        config.resources.n_sub_used, config.resources.n_sym_used, seed=config.resource_seed(),
    )
    delays, dopplers = block_truth(setup, metadata, n_subcarriers, rec.block_len, rec.n_blocks)
    truth = {
        "preset": setup.name,
        "blocks": [
            {
                "index": k,
                "targets": [_target_record(block_grid, delays[k, i], dopplers[k, i], setup.gain) for i in range(2)],
            }
            for k in range(rec.n_blocks)
        ],
    }

    suffix = ".csv" if rec.format == "csv" else ".bin"
    written = [
        save_recording(recording, (out / RECORDING_FILE).with_suffix(suffix), rec.format),
        save_resource_set(rs, out / RESOURCES_FILE),
        _write_json(out / TRUTH_FILE, truth),
    ]
    written.extend(write_snapshot(config, out, derived={
        "n_symbols_total": recording.n_symbols,
        "n_resources": len(rs),
        "tangential_speed_mps": setup.tangential_speed,
    }))
    for path in written:
        slog.log_artifact("synth-recording", path, path.suffix.lstrip("."))
    return written


# ---------------------------------------------------------------------------
# argument handling

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run configuration file (key = value lines)")
    common.add_argument("--seed", type=int, help="Master seed (run.seed)")
    common.add_argument("--out", help="Output directory (run.out)")
    common.add_argument("--threads", type=int, help="Worker threads (run.threads)")
    common.add_argument("--log-dir", help="Structured log directory (run.log_dir)")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="Override any configuration key, repeatable",
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="python -m src.app.cli",
        description="Sparse OFDM sensing: off-grid delay-Doppler detection and studies.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="Synthesize one sparse measurement")

    detect = sub.add_parser("detect", parents=[common], help="Detect targets in a stored measurement")
    detect.add_argument("--detector", choices=DETECT_DETECTORS, help="Detector (detector.name)")
    detect.add_argument("--input", help="Measurement or recording file (raw_complex or csv)")
    detect.add_argument("--resources", help="Resource set CSV, default resources.csv next to the input")
    detect.add_argument("--truth", help="Truth JSON for association")

    bench = sub.add_parser("bench", parents=[common], help="Run a Monte-Carlo study")
    bench.add_argument("--scenario", choices=SCENARIOS, help="Study (run.scenario)")
    bench.add_argument("--trials", type=int, help="Trials per sweep point (run.trials)")
    bench.add_argument("--list", action="store_true", help="List the available studies and exit")

    synth = sub.add_parser("synth-recording", parents=[common], help="Emulate a rotating-target recording")
    synth.add_argument("--preset", choices=sorted(PRESETS), help="Emulator preset (recording.preset)")
    return parser


FLAG_KEYS = {
    "seed": "run.seed",
    "out": "run.out",
    "threads": "run.threads",
    "log_dir": "run.log_dir",
    "detector": "detector.name",
    "scenario": "run.scenario",
    "trials": "run.trials",
    "preset": "recording.preset",
}


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Flat configuration keys from parsed flags; --set entries first, named flags win."""
    overrides: Dict[str, Any] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"--set expects KEY=VALUE, got '{item}'")
        overrides[key.strip()] = value.strip()
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return overrides


def _dispatch(args: argparse.Namespace, config: RunConfig, slog: StructuredLogger) -> List[Path]:
    if args.command == "simulate":
        return cmd_simulate(config, slog)
    if args.command == "detect":
        return cmd_detect(config, slog, args.input, args.resources, args.truth)
    if args.command == "bench":
        return cmd_bench(config, slog)
    return cmd_synth_recording(config, slog)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "bench" and args.list:
        for name in SCENARIOS:
            print(name)
        return EXIT_OK

    try:
        config = load_run_config(args.config, flag_overrides(args))
        slog = setup_logging(config.run.log_dir, run_id=f"{args.command}-{config.run.seed}")
        written = _dispatch(args, config, slog)
    except RecordingFormatError as e:
        logger.error(f"Input format error: {e}")
        return EXIT_FORMAT
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        logger.error(f"Numeric failure: {e}")
        return EXIT_NUMERIC
    except OSError as e:
        logger.error(f"Cannot write output: {e}")
        return EXIT_USAGE

    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
