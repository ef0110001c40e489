"""Activation extraction for the coincide selection pipeline.

Taps a reference VLM's per-layer attention outputs, pools each layer's
visual and text token streams into unit vectors, concatenates across
layers, and writes the feature-store files the selection engine
consumes. A deterministic hash-seeded stub backend makes every test and
offline run reproducible without weights or a GPU.
"""

from .aggregate import compose_sample, pool_modality
from .dataset import Sample, load_dataset, task_labels
from .errors import (
    ActivationError,
    ConfigError,
    DatasetError,
    ExtractError,
    SegmentationError,
)
from .extract import BACKENDS, ExtractConfig, extract, make_backend
from .stub import (
    DEFAULT_LAYER_INDICES,
    DEFAULT_MODEL_ID,
    STUB_DEPTH,
    STUB_VISUAL_TOKENS,
    StubModel,
    TokenLayout,
)
from .writer import feature_path, manifest_path, write_store

__version__ = "0.1.0"

__all__ = [
    "ActivationError",
    "BACKENDS",
    "ConfigError",
    "DEFAULT_LAYER_INDICES",
    "DEFAULT_MODEL_ID",
    "DatasetError",
    "ExtractConfig",
    "ExtractError",
    "Sample",
    "SegmentationError",
    "STUB_DEPTH",
    "STUB_VISUAL_TOKENS",
    "StubModel",
    "TokenLayout",
    "compose_sample",
    "extract",
    "feature_path",
    "load_dataset",
    "make_backend",
    "manifest_path",
    "pool_modality",
    "task_labels",
    "write_store",
    "__version__",
]
