"""
Channel recordings and their file formats.

Two encodings of an N×M_total complex channel matrix are supported:

raw_complex
    8-byte magic b"SISOCHM1", little-endian u32 N, u32 M_total, then
    N·M_total complex values as interleaved little-endian float64
    (real, imag), column-major by symbol.
csv
    Header row, columns n, m, re, im; one row per grid cell.

Grid metadata (Δf, T_o, f_c, start time) lives in a JSON sidecar next to
the data file, ``<file>.json``.
"""
import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.core.types import GridConfig, ResourceMode, ResourceSet
from src.core.utils import is_bad_number

logger = logging.getLogger(__name__)

MAGIC = b"SISOCHM1"
HEADER = struct.Struct("<8sII")
FORMATS = ("raw_complex", "csv")

PathLike = Union[str, Path]


class RecordingFormatError(ValueError):
    """Malformed recording; offset is a byte offset (raw) or data row (csv)."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class RecordingMetadata:
    """Physical constants of a recording."""
    subcarrier_spacing: float  # Hz
    symbol_duration: float  # s
    carrier_freq: float  # Hz
    start_time: float = 0.0  # s
    description: str = ""

    def __post_init__(self):
        for name in ("subcarrier_spacing", "symbol_duration", "carrier_freq"):
            value = getattr(self, name)
            if is_bad_number(value) or value <= 0:
                raise ValueError(f"{name} must be > 0, got {value}")

    def grid_config(self, n_subcarriers: int, n_symbols: int) -> GridConfig:
        return GridConfig(n_subcarriers, n_symbols, self.subcarrier_spacing, self.symbol_duration, self.carrier_freq)


@dataclass(frozen=True, eq=False)
class ChannelRecording:
    """One long N×M_total channel matrix, symbols along the columns."""
    matrix: np.ndarray
    metadata: Optional[RecordingMetadata] = None

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.complex128)
        if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
            raise ValueError(f"recording matrix must be 2-D and non-empty, got shape {matrix.shape}")
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def from_frames(
        cls, frames: Sequence[np.ndarray], metadata: Optional[RecordingMetadata] = None
    ) -> "ChannelRecording":
        """Concatenate N×M' frames along the symbol axis."""
        if not frames:
            raise ValueError("no frames given")
        rows = {np.shape(f)[0] for f in frames}
        if len(rows) != 1:
            raise ValueError(f"frames disagree on the subcarrier count: {sorted(rows)}")
        return cls(np.hstack([np.asarray(f, dtype=np.complex128) for f in frames]), metadata)

    @property
    def n_subcarriers(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def n_symbols(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def timestamps(self) -> np.ndarray:
        """Start time of every symbol."""
        if self.metadata is None:
            raise ValueError("recording has no metadata")
        return self.metadata.start_time + np.arange(self.n_symbols) * self.metadata.symbol_duration

    def with_matrix(self, matrix: np.ndarray) -> "ChannelRecording":
        return ChannelRecording(matrix, self.metadata)


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _resolve_format(path: Path, fmt: Optional[str]) -> str:
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "raw_complex"
    if fmt not in FORMATS:
        raise ValueError(f"Unknown recording format '{fmt}'. Valid: {', '.join(FORMATS)}")
    return fmt


def _parse_raw(data: bytes) -> np.ndarray:
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise RecordingFormatError("bad magic, expected b'SISOCHM1'", 0)
    if len(data) < HEADER.size:
        raise RecordingFormatError(f"header truncated: expected {HEADER.size} bytes, got {len(data)}", len(data))
    _, n_rows, n_cols = HEADER.unpack_from(data, 0)
    if n_rows == 0:
        raise RecordingFormatError("N must be positive", 8)
    if n_cols == 0:
        raise RecordingFormatError("M_total must be positive", 12)
    expected = n_rows * n_cols * 16
    actual = len(data) - HEADER.size
    if actual != expected:
        raise RecordingFormatError(
            f"sample payload length mismatch for {n_rows}x{n_cols}: expected {expected} bytes, got {actual}",
            HEADER.size + min(actual, expected),
        )
    values = np.frombuffer(data, dtype="<c16", offset=HEADER.size, count=n_rows * n_cols)
    return values.reshape((n_rows, n_cols), order="F").astype(np.complex128)


def _parse_csv(path: Path) -> np.ndarray:
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise RecordingFormatError(f"unreadable csv: {e}", 0) from e
    missing = [c for c in ("n", "m", "re", "im") if c not in frame.columns]
    if missing:
        raise RecordingFormatError(f"csv header lacks columns {missing}", 0)
    if frame.empty:
        raise RecordingFormatError("csv has no data rows", 1)

    for column in ("n", "m", "re", "im"):
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = values.isna() | ~np.isfinite(values)
        if column in ("n", "m"):
            bad |= (values < 0) | (values % 1 != 0)
        if bad.any():
            row = int(np.argmax(bad.to_numpy())) + 1
            raise RecordingFormatError(f"invalid value in column '{column}'", row)
        frame[column] = values

    n = frame["n"].to_numpy(dtype=np.int64)
    m = frame["m"].to_numpy(dtype=np.int64)
    n_rows, n_cols = int(n.max()) + 1, int(m.max()) + 1
    linear = n + m * n_rows
    _, first = np.unique(linear, return_index=True)
    if first.size != linear.size:
        dup = np.setdiff1d(np.arange(linear.size), first)[0]
        raise RecordingFormatError(f"duplicate cell (n={n[dup]}, m={m[dup]})", int(dup) + 1)
    if linear.size != n_rows * n_cols:
        raise RecordingFormatError(
            f"csv covers {linear.size} cells, a {n_rows}x{n_cols} grid needs {n_rows * n_cols}", int(linear.size)
        )
    matrix = np.empty((n_rows, n_cols), dtype=np.complex128)
    matrix[n, m] = frame["re"].to_numpy(dtype=float) + 1j * frame["im"].to_numpy(dtype=float)
    return matrix


def _load_metadata(path: Path) -> Optional[RecordingMetadata]:
    sidecar = _sidecar(path)
    if not sidecar.exists():
        return None
    try:
        return RecordingMetadata(**json.loads(sidecar.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, TypeError) as e:
        raise RecordingFormatError(f"bad metadata sidecar {sidecar.name}: {e}", 0) from e


def load_recording(
    path: PathLike,
    fmt: Optional[str] = None,
    metadata: Optional[RecordingMetadata] = None,
) -> ChannelRecording:
    """
    Read a recording.

    Args:
        path: Data file
        fmt: 'raw_complex' or 'csv'; inferred from the suffix when None
        metadata: Overrides the JSON sidecar

    Raises:
        FileNotFoundError: Missing data file
        RecordingFormatError: Malformed content
    """
    path = Path(path)
    fmt = _resolve_format(path, fmt)
    if fmt == "raw_complex":
        matrix = _parse_raw(path.read_bytes())
    else:
        matrix = _parse_csv(path)
    meta = metadata if metadata is not None else _load_metadata(path)
    logger.info(f"Loaded {matrix.shape[0]}x{matrix.shape[1]} recording from {path} ({fmt})")
    return ChannelRecording(matrix, meta)


def save_recording(recording: ChannelRecording, path: PathLike, fmt: Optional[str] = None) -> Path:
    """Write a recording (and its metadata sidecar when present)."""
    path = Path(path)
    fmt = _resolve_format(path, fmt)
    H = recording.matrix
    if fmt == "raw_complex":
        payload = np.asarray(H.ravel(order="F"), dtype="<c16").tobytes()
        path.write_bytes(HEADER.pack(MAGIC, H.shape[0], H.shape[1]) + payload)
    else:
        n, m = np.meshgrid(np.arange(H.shape[0]), np.arange(H.shape[1]), indexing="ij")
        frame = pd.DataFrame({
            "n": n.ravel(order="F"),
            "m": m.ravel(order="F"),
            "re": H.real.ravel(order="F"),
            "im": H.imag.ravel(order="F"),
        })
        frame.to_csv(path, index=False, float_format="%.17g")
    if recording.metadata is not None:
        _sidecar(path).write_text(json.dumps(asdict(recording.metadata), indent=2), encoding="utf-8")
    logger.info(f"Saved {H.shape[0]}x{H.shape[1]} recording to {path} ({fmt})")
    return path


def save_resource_set(rs: ResourceSet, path: PathLike) -> Path:
    """Ω_s as a CSV of (n, m) rows in resource-set order, grid info in the sidecar."""
    path = Path(path)
    pd.DataFrame({"n": rs.subcarriers, "m": rs.symbols}).to_csv(path, index=False)
    info = {
        "n_subcarriers": rs.n_subcarriers,
        "n_symbols": rs.n_symbols,
        "mode": rs.mode.value,
        "per_symbol_subcarriers": rs.per_symbol_subcarriers,
    }
    _sidecar(path).write_text(json.dumps(info, indent=2), encoding="utf-8")
    return path


def load_resource_set(
    path: PathLike, n_subcarriers: Optional[int] = None, n_symbols: Optional[int] = None
) -> ResourceSet:
    """
    Read Ω_s written by save_resource_set.

    Grid dimensions come from the arguments or the sidecar. Row order is
    preserved, since it fixes the element order of the matching vectors.
    """
    path = Path(path)
    info = {}
    if _sidecar(path).exists():
        info = json.loads(_sidecar(path).read_text(encoding="utf-8"))
    n_subcarriers = n_subcarriers or info.get("n_subcarriers")
    n_symbols = n_symbols or info.get("n_symbols")
    if n_subcarriers is None or n_symbols is None:
        raise ValueError(f"grid dimensions for {path} are unknown: pass them or provide the sidecar")
    frame = pd.read_csv(path)
    if list(frame.columns[:2]) != ["n", "m"]:
        raise RecordingFormatError("resource csv must start with columns n, m", 0)
    try:
        return ResourceSet(
            frame[["n", "m"]].to_numpy(),
            int(n_subcarriers),
            int(n_symbols),
            mode=ResourceMode(info.get("mode", ResourceMode.ELEMENTWISE.value)),
            per_symbol_subcarriers=info.get("per_symbol_subcarriers"),
        )
    except ValueError as e:
        raise RecordingFormatError(f"invalid resource set: {e}", 0) from e
