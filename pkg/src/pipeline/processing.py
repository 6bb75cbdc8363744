"""
Recording replay: background subtraction, coherent blocks, per-block detection.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from src.core.types import ChannelVector, DetectionSet, GridConfig, ResourceSet
from src.pipeline.recording import ChannelRecording
from src.recovery.detectors import DetectorConfig, nomp_detect
from src.scene.resources import compress_from_grid

logger = logging.getLogger(__name__)

DEFAULT_FORGETTING = 0.9


@dataclass(frozen=True, eq=False)
class BackgroundState:
    """Running average B (one value per subcarrier) and forgetting factor λ_bg."""
    average: np.ndarray
    forgetting: float = DEFAULT_FORGETTING

    def __post_init__(self):
        if not (0.0 < self.forgetting < 1.0):
            raise ValueError(f"forgetting factor must be in (0, 1), got {self.forgetting}")
        average = np.asarray(self.average, dtype=np.complex128).reshape(-1)
        object.__setattr__(self, "average", average)

    @classmethod
    def zeros(cls, n_subcarriers: int, forgetting: float = DEFAULT_FORGETTING) -> "BackgroundState":
        return cls(np.zeros(n_subcarriers, dtype=np.complex128), forgetting)


def _running_average(rows: np.ndarray, alpha: float) -> np.ndarray:
    # ewm(adjust=False) is the recursion y_t = (1-alpha)·y_{t-1} + alpha·x_t
    real = pd.DataFrame(rows.real).ewm(alpha=alpha, adjust=False).mean().to_numpy()
    imag = pd.DataFrame(rows.imag).ewm(alpha=alpha, adjust=False).mean().to_numpy()
    return real + 1j * imag


def background_subtract(
    recording: ChannelRecording,
    forgetting: float = DEFAULT_FORGETTING,
    state: Optional[BackgroundState] = None,
) -> Tuple[ChannelRecording, BackgroundState]:
    """
    Remove static contributions with an exponential running average.

    B_k = λ_bg·B_{k-1} + (1-λ_bg)·H_k over symbols k, output H_k - B_{k-1}.
    A component with Doppler α passes with gain
    1 - (1-λ_bg)·e^{-j2παT_o} / (1 - λ_bg·e^{-j2παT_o}), which is zero at
    α = 0 and close to one away from it.

    Args:
        recording: Channel matrix, symbols along columns
        forgetting: λ_bg in (0, 1), used when state is None
        state: Average carried over from a previous chunk; None seeds it
            with the first symbol column

    Returns:
        (cleaned recording, updated state)
    """
    H = recording.matrix
    if state is None:
        state = BackgroundState(H[:, 0], forgetting)
    elif state.average.size != H.shape[0]:
        raise ValueError(f"background state has {state.average.size} subcarriers, recording has {H.shape[0]}")

    rows = np.vstack([state.average[None, :], H.T])
    averages = _running_average(rows, 1.0 - state.forgetting)
    cleaned = H - averages[:-1].T
    return recording.with_matrix(cleaned), BackgroundState(averages[-1], state.forgetting)


class BlockStream:
    """
    Consecutive non-overlapping blocks of block_len symbols.

    The same Ω_s template (block-local symbol indices) is applied to every
    block; a trailing partial block is dropped.
    """

    def __init__(self, recording: ChannelRecording, block_len: int, rs_template: ResourceSet):
        if block_len < 1:
            raise ValueError(f"block_len must be >= 1, got {block_len}")
        if (rs_template.n_subcarriers, rs_template.n_symbols) != (recording.n_subcarriers, block_len):
            raise ValueError(
                f"resource template grid {(rs_template.n_subcarriers, rs_template.n_symbols)} "
                f"does not match block grid {(recording.n_subcarriers, block_len)}"
            )
        self.recording = recording
        self.block_len = int(block_len)
        self.rs_template = rs_template
        self.n_blocks = recording.n_symbols // self.block_len
        self.insufficient = self.n_blocks == 0
        if self.insufficient:
            logger.warning(
                f"Recording has {recording.n_symbols} symbols, fewer than one block of {block_len}"
            )
        elif recording.n_symbols % self.block_len:
            logger.debug(f"Dropping {recording.n_symbols % self.block_len} trailing symbols")

    def __len__(self) -> int:
        return self.n_blocks

    def block_matrix(self, index: int) -> np.ndarray:
        if not (0 <= index < self.n_blocks):
            raise IndexError(f"block {index} out of range [0, {self.n_blocks})")
        start = index * self.block_len
        return self.recording.matrix[:, start:start + self.block_len]

    def __iter__(self) -> Iterator[Tuple[ChannelVector, int]]:
        for k in range(self.n_blocks):
            yield ChannelVector(compress_from_grid(self.block_matrix(k), self.rs_template), self.rs_template), k


def block_stream(recording: ChannelRecording, block_len: int, rs_template: ResourceSet) -> BlockStream:
    """Iterator of (ChannelVector, block index); see BlockStream."""
    return BlockStream(recording, block_len, rs_template)


class BlockResult(NamedTuple):
    """Detections of one coherent block."""
    index: int
    start_time: float
    detections: DetectionSet


def process_recording(
    recording: ChannelRecording,
    rs_template: ResourceSet,
    det: DetectorConfig,
    forgetting: Optional[float] = DEFAULT_FORGETTING,
    k_known: Optional[int] = None,
    detector: Optional[Callable[..., DetectionSet]] = None,
) -> List[BlockResult]:
    """
    Background subtraction, block segmentation and detection per block.

    Args:
        recording: Long channel matrix with metadata
        rs_template: Ω_s on the N×block_len grid
        det: Detector parameters
        forgetting: λ_bg; None skips background subtraction
        k_known: Fixed target count per block
        detector: Callable with the nomp_detect signature, nomp_detect by default

    Returns:
        One BlockResult per complete block
    """
    if recording.metadata is None:
        raise ValueError("recording metadata (Δf, T_o, f_c) is required for detection")
    detector = detector or nomp_detect
    block_len = rs_template.n_symbols
    config: GridConfig = recording.metadata.grid_config(recording.n_subcarriers, block_len)

    if forgetting is not None:
        recording, _ = background_subtract(recording, forgetting)
    stream = block_stream(recording, block_len, rs_template)

    results = []
    for vector, k in stream:
        found = detector(vector, rs_template, config, det, k_known=k_known)
        start = recording.metadata.start_time + k * block_len * config.symbol_duration
        results.append(BlockResult(k, start, found))
        logger.debug(f"Block {k}: {len(found)} detections, flags={found.flag_names()}")
    logger.info(f"Processed {len(results)} blocks of {block_len} symbols")
    return results
