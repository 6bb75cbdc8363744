"""Scene module exports."""
from src.scene.resources import (
    select_resources,
    full_resource_set,
    scatter_to_grid,
    compress_from_grid,
)
from src.scene.channel import (
    CONSTELLATIONS,
    atom,
    atom_matrix,
    channel_matrix,
    modulation_grid,
    synthesize_channel,
    scene_from_snr,
    swpr_db,
    weak_gain_for_swpr,
)
from src.scene.units import (
    delay_doppler_to_range_velocity,
    range_velocity_to_delay_doppler,
    max_unambiguous_velocity,
)

__all__ = [
    'select_resources', 'full_resource_set', 'scatter_to_grid', 'compress_from_grid',
    'CONSTELLATIONS', 'atom', 'atom_matrix', 'channel_matrix', 'modulation_grid',
    'synthesize_channel', 'scene_from_snr', 'swpr_db', 'weak_gain_for_swpr',
    'delay_doppler_to_range_velocity', 'range_velocity_to_delay_doppler',
    'max_unambiguous_velocity',
]
