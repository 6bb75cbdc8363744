"""
Zero-filled 2D-FFT periodogram and peak picking.

The map is the squared magnitude of the same transform pair the recovery
correlation uses, without windowing.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy.ndimage import maximum_filter

from src.core.types import (
    ChannelVector,
    Detection,
    DetectionFlag,
    DetectionSet,
    GridConfig,
    Provenance,
    ResourceSet,
)
from src.recovery.detectors import DetectorConfig, estimate_noise_power, stop_level
from src.recovery.dictionary import DictionarySpec, correlate_residual

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RangeDopplerMap:
    """Squared-magnitude map over the delay (rows) and Doppler (columns) bins."""
    magnitudes: np.ndarray
    delays: np.ndarray
    dopplers: np.ndarray
    n_resources: int
    correlation: Optional[np.ndarray] = None  # complex bins c, magnitudes = |c|²

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=float)
        if mags.shape != (self.delays.size, self.dopplers.size):
            raise ValueError(f"map shape {mags.shape} does not match axes ({self.delays.size}, {self.dopplers.size})")
        if np.any(mags < 0):
            raise ValueError("map entries must be >= 0")
        if self.correlation is not None and np.shape(self.correlation) != mags.shape:
            raise ValueError(f"correlation shape {np.shape(self.correlation)} does not match the map {mags.shape}")
        for name, axis in (("delays", self.delays), ("dopplers", self.dopplers)):
            if axis.size > 1 and np.any(np.diff(axis) <= 0):
                raise ValueError(f"{name} axis must be strictly increasing")
        object.__setattr__(self, "magnitudes", mags)

    @property
    def shape(self):
        return self.magnitudes.shape

    def to_frame(self) -> pd.DataFrame:
        """Long table: delay_bin, doppler_bin, delay_s, doppler_hz, magnitude."""
        P, Q = self.shape
        p, q = np.meshgrid(np.arange(P), np.arange(Q), indexing="ij")
        return pd.DataFrame({
            "delay_bin": p.ravel(),
            "doppler_bin": q.ravel(),
            "delay_s": self.delays[p.ravel()],
            "doppler_hz": self.dopplers[q.ravel()],
            "magnitude": self.magnitudes.ravel(),
        })

    def export_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        logger.info(f"Range-Doppler map written to {path}")
        return path


def periodogram(
    measurement: ChannelVector,
    rs: ResourceSet,
    config: GridConfig,
    oversampling: int = 1,
) -> RangeDopplerMap:
    """
    |2D-FFT|² of the zero-filled grid.

    IDFT along subcarriers gives delay, DFT along symbols gives Doppler,
    both zero-padded by γ. On a full grid a single on-grid target peaks at
    |β|²·(NM)².
    """
    if not measurement.resource_set.same_as(rs):
        raise ValueError("measurement is not ordered by the given resource set")
    dictionary = DictionarySpec.build(config, oversampling)
    c = correlate_residual(measurement, config, dictionary, mode="fft")
    return RangeDopplerMap(np.abs(c) ** 2, dictionary.delays, dictionary.dopplers, len(rs), correlation=c)


def extract_peaks(
    rd_map: RangeDopplerMap,
    k: Optional[int] = None,
    threshold: Optional[float] = None,
) -> DetectionSet:
    """
    Greedy local-maxima picking with a one-bin guard zone.

    Candidates are local maxima of the (circular) map, taken by decreasing
    value with ties in linear index p + q·P order; a candidate within one
    bin of an accepted peak is skipped. Gains are the complex bins c / |Ω_s|,
    or sqrt(value) / |Ω_s| for a map built from magnitudes only.

    Args:
        rd_map: Periodogram
        k: Number of peaks wanted
        threshold: Minimum map value (used alone or together with k)

    Returns:
        DetectionSet of coarse detections; flagged short when fewer than k
    """
    if k is None and threshold is None:
        raise ValueError("extract_peaks needs k or threshold")
    if k is not None and k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if threshold is not None and not threshold > 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")

    values = rd_map.magnitudes
    P, Q = values.shape
    is_max = (values >= maximum_filter(values, size=3, mode="wrap")) & (values > 0)
    if threshold is not None:
        is_max &= values >= threshold
    p_idx, q_idx = np.nonzero(is_max)
    linear = p_idx + q_idx * P
    order = np.lexsort((linear, -values[p_idx, q_idx]))

    picked = []
    for i in order:
        p, q = int(p_idx[i]), int(q_idx[i])
        guarded = any(
            min(abs(p - pp), P - abs(p - pp)) <= 1 and min(abs(q - qq), Q - abs(q - qq)) <= 1
            for pp, qq in picked
        )
        if guarded:
            continue
        picked.append((p, q))
        if k is not None and len(picked) >= k:
            break

    flags = set()
    if k is not None and len(picked) < k:
        flags.add(DetectionFlag.SHORT)
        logger.warning(f"Only {len(picked)} peaks found, {k} requested")

    def _gain(p: int, q: int) -> complex:
        if rd_map.correlation is not None:
            return complex(rd_map.correlation[p, q] / rd_map.n_resources)
        return complex(np.sqrt(values[p, q]) / rd_map.n_resources)

    detections = tuple(
        Detection(float(rd_map.delays[p]), float(rd_map.dopplers[q]), _gain(p, q), Provenance.COARSE)
        for p, q in picked
    )
    return DetectionSet(detections, frozenset(flags), len(detections))


def fft2d_detect(
    measurement: ChannelVector,
    rs: ResourceSet,
    config: GridConfig,
    det: DetectorConfig,
    k_known: Optional[int] = None,
) -> DetectionSet:
    """
    Periodogram detector with the same call shape as nomp_detect.

    Takes the k_known strongest peaks, or every peak whose normalized value
    |c|² / (σ̂²·|Ω_s|) exceeds the CFAR level δ calibrated to the map size.
    """
    rd_map = periodogram(measurement, rs, config, det.oversampling)
    if k_known is not None:
        if k_known == 0:
            return DetectionSet()
        return extract_peaks(rd_map, k=k_known)
    n_res = len(rs)
    sigma2 = det.noise_power if det.noise_power is not None else estimate_noise_power(measurement.values)
    delta = stop_level(rs, DictionarySpec.build(config, det.oversampling), det)
    threshold = max(delta * sigma2 * n_res, np.finfo(float).tiny)
    return extract_peaks(rd_map, threshold=threshold)
