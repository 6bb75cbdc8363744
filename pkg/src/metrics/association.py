"""
Detection-to-truth association and error aggregation.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.types import Detection, DetectionSet, GridConfig, TargetTruth
from src.core.utils import circular_difference, safe_divide

logger = logging.getLogger(__name__)

DEFAULT_GATES = (0.5, 0.5)


@dataclass(frozen=True)
class Matching:
    """
    Result of associate().

    pairs holds (truth index, detection index); errors are signed
    detection-minus-truth differences in seconds / Hz, one per pair.
    """
    pairs: Tuple[Tuple[int, int], ...]
    misses: Tuple[int, ...]
    false_alarms: Tuple[int, ...]
    delay_errors: Tuple[float, ...]
    doppler_errors: Tuple[float, ...]
    n_truths: int

    @property
    def pod(self) -> float:
        """Fraction of truths matched (1.0 when there is nothing to find)."""
        return safe_divide(len(self.pairs), self.n_truths, default=1.0)

    def matched(self, truth_index: int) -> bool:
        return any(t == truth_index for t, _ in self.pairs)

    def error_of(self, truth_index: int) -> Tuple[float, float]:
        for (t, _), de, dd in zip(self.pairs, self.delay_errors, self.doppler_errors):
            if t == truth_index:
                return de, dd
        raise KeyError(f"truth {truth_index} is not matched")


def associate(
    detections: Union[DetectionSet, Sequence[Detection]],
    truths: Sequence[TargetTruth],
    config: GridConfig,
    gates: Tuple[float, float] = DEFAULT_GATES,
) -> Matching:
    """
    Greedy nearest-neighbour association in resolution-cell units.

    Distances are circular over the unambiguous spans (N delay cells,
    M Doppler cells). A pair is admissible when both axis offsets lie
    within the gates; admissible pairs are taken by increasing Euclidean
    cell distance, ties broken by truth then detection list order.

    Args:
        detections: Estimates
        truths: Ground-truth targets
        config: Grid constants defining the cells
        gates: (delay gate, Doppler gate) in cells, both > 0

    Returns:
        Matching
    """
    if len(gates) != 2 or not (gates[0] > 0 and gates[1] > 0):
        raise ValueError(f"gates must be two positive cell counts, got {gates}")
    dets: List[Detection] = list(detections)
    N, M = config.shape

    candidates = []
    for i, truth in enumerate(truths):
        for j, det in enumerate(dets):
            du = float(circular_difference(det.delay / config.delay_cell, truth.delay / config.delay_cell, N))
            dw = float(circular_difference(det.doppler / config.doppler_cell, truth.doppler / config.doppler_cell, M))
            if abs(du) <= gates[0] and abs(dw) <= gates[1]:
                candidates.append((float(np.hypot(du, dw)), i, j, du, dw))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))

    used_truths, used_dets = set(), set()
    pairs, delay_errors, doppler_errors = [], [], []
    for _, i, j, du, dw in candidates:
        if i in used_truths or j in used_dets:
            continue
        used_truths.add(i)
        used_dets.add(j)
        pairs.append((i, j))
        delay_errors.append(du * config.delay_cell)
        doppler_errors.append(dw * config.doppler_cell)

    misses = tuple(i for i in range(len(truths)) if i not in used_truths)
    false_alarms = tuple(j for j in range(len(dets)) if j not in used_dets)
    return Matching(tuple(pairs), misses, false_alarms, tuple(delay_errors), tuple(doppler_errors), len(truths))


def rmse(errors: Iterable[float]) -> float:
    """Root-mean-square of the errors, NaN when empty."""
    values = np.asarray(list(errors), dtype=float)
    if values.size == 0:
        return float("nan")
    return float(np.sqrt(np.mean(values ** 2)))


def pod(matchings: Iterable[Matching], truth_index: Optional[int] = None) -> float:
    """
    Probability of detection over trials.

    With truth_index, the fraction of trials where that truth was matched;
    otherwise matched truths over all truths.
    """
    matchings = list(matchings)
    if not matchings:
        return float("nan")
    if truth_index is not None:
        return float(np.mean([m.matched(truth_index) for m in matchings]))
    found = sum(len(m.pairs) for m in matchings)
    total = sum(m.n_truths for m in matchings)
    return safe_divide(found, total, default=1.0)
