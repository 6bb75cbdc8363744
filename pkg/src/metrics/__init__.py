"""Metrics module exports."""
from src.metrics.crb import CrbParams, CrbResult, crb, crb_exact
from src.metrics.association import DEFAULT_GATES, Matching, associate, rmse, pod
from src.metrics.experiments import (
    SCENARIOS,
    DETECTORS,
    DETECTOR_REGISTRY,
    SCENARIO_REGISTRY,
    ExperimentConfig,
    ExperimentReport,
    run_experiment,
)

__all__ = [
    'CrbParams', 'CrbResult', 'crb', 'crb_exact',
    'DEFAULT_GATES', 'Matching', 'associate', 'rmse', 'pod',
    'SCENARIOS', 'DETECTORS', 'DETECTOR_REGISTRY', 'SCENARIO_REGISTRY',
    'ExperimentConfig', 'ExperimentReport', 'run_experiment',
]
