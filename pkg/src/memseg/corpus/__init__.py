from .contrast import concat_spatial, concat_temporal, contrast_sample, eligible
from .scenes import (
    VOCAB,
    GenerationError,
    SceneConfig,
    VideoSample,
    count_matches,
    flip_sample,
    generate,
    matches,
    validate_roles,
)
from .storage import read_dataset, read_sample, write_dataset, write_sample

__all__ = [
    "VOCAB",
    "GenerationError",
    "SceneConfig",
    "VideoSample",
    "concat_spatial",
    "concat_temporal",
    "contrast_sample",
    "count_matches",
    "eligible",
    "flip_sample",
    "generate",
    "matches",
    "read_dataset",
    "read_sample",
    "validate_roles",
    "write_dataset",
    "write_sample",
]
