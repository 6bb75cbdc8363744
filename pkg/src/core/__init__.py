"""Core module exports."""
from src.core.types import (
    Provenance,
    DetectionFlag,
    ResourceMode,
    GridConfig,
    ResourceSet,
    TargetTruth,
    Scene,
    ChannelVector,
    ModSymbolGrid,
    Detection,
    DetectionSet,
)
from src.core.utils import (
    is_bad_number,
    safe_divide,
    db_to_linear,
    wrap_cells,
    wrap_centered,
    circular_difference,
)
from src.core.time_utils import (
    median_wall_time,
    format_elapsed,
)

__all__ = [
    'Provenance', 'DetectionFlag', 'ResourceMode',
    'GridConfig', 'ResourceSet', 'TargetTruth', 'Scene', 'ChannelVector',
    'ModSymbolGrid', 'Detection', 'DetectionSet',
    'is_bad_number', 'safe_divide', 'db_to_linear',
    'wrap_cells', 'wrap_centered', 'circular_difference',
    'median_wall_time', 'format_elapsed',
]
