"""Pipeline module exports."""
from src.pipeline.recording import (
    FORMATS,
    RecordingFormatError,
    RecordingMetadata,
    ChannelRecording,
    load_recording,
    save_recording,
    save_resource_set,
    load_resource_set,
)
from src.pipeline.processing import (
    DEFAULT_FORGETTING,
    BackgroundState,
    BlockStream,
    BlockResult,
    background_subtract,
    block_stream,
    process_recording,
)
from src.pipeline.carousel import (
    PRESETS,
    CarouselSetup,
    carousel_truth,
    block_truth,
    synthesize_carousel_recording,
    preset,
)

__all__ = [
    'FORMATS', 'RecordingFormatError', 'RecordingMetadata', 'ChannelRecording',
    'load_recording', 'save_recording', 'save_resource_set', 'load_resource_set',
    'DEFAULT_FORGETTING', 'BackgroundState', 'BlockStream', 'BlockResult',
    'background_subtract', 'block_stream', 'process_recording',
    'PRESETS', 'CarouselSetup', 'carousel_truth', 'block_truth',
    'synthesize_carousel_recording', 'preset',
]
