"""Recovery module exports."""
from src.recovery.dictionary import (
    CORRELATION_MODES,
    DictionarySpec,
    ind2sub,
    sub2ind,
    sensing_matrix,
    correlate_residual,
)
from src.recovery.newton import (
    GLOBAL_MODES,
    ObjectiveEval,
    objective_derivatives,
    joint_derivatives,
    refine_local,
    refine_global,
)
from src.recovery.detectors import (
    DetectorConfig,
    CoarseEstimate,
    GainFit,
    cfar_threshold,
    effective_cells,
    stop_level,
    estimate_noise_power,
    coarse_detect,
    ls_gains,
    nomp_detect,
    omp_detect,
)

__all__ = [
    'CORRELATION_MODES', 'DictionarySpec', 'ind2sub', 'sub2ind', 'sensing_matrix',
    'correlate_residual',
    'GLOBAL_MODES', 'ObjectiveEval', 'objective_derivatives', 'joint_derivatives',
    'refine_local', 'refine_global',
    'DetectorConfig', 'CoarseEstimate', 'GainFit', 'cfar_threshold', 'effective_cells', 'stop_level',
    'estimate_noise_power', 'coarse_detect', 'ls_gains', 'nomp_detect', 'omp_detect',
]
