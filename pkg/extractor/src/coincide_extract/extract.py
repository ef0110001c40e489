"""Extraction engine: model taps -> per-layer pooling -> feature store.

The engine asks the backend for each sample's token activations at the
configured layers, splits each stream at the boundary the backend
reports, pools per modality, concatenates across layers, and hands the
finished matrix to the single-owner writer. Samples are processed in
batches (the real backend runs one forward pass per batch); results are
placed by sample position, so batch size never changes the output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregate import compose_sample
from .dataset import Sample, task_labels
from .errors import ConfigError, SegmentationError
from .stub import DEFAULT_LAYER_INDICES, DEFAULT_MODEL_ID, StubModel
from .writer import write_store

BACKEND_STUB = "stub"
BACKEND_STUB_CONST = "stub-const"
BACKEND_HF = "hf"
BACKENDS = (BACKEND_STUB, BACKEND_STUB_CONST, BACKEND_HF)


@dataclass
class ExtractConfig:
    """Everything one extraction run needs."""

    model_id: str = DEFAULT_MODEL_ID
    layer_indices: tuple[int, ...] = DEFAULT_LAYER_INDICES
    backend: str = BACKEND_STUB
    hidden_dim: int = 32  # stub backends only; the real model dictates its own
    batch_size: int = 8
    device: str = "cpu"
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        layers = list(self.layer_indices)
        if not layers:
            raise ConfigError("need at least one layer index")
        if layers != sorted(set(layers)) or layers[0] < 0:
            raise ConfigError(
                f"layer_indices must be strictly increasing and nonnegative, got {layers}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")


def make_backend(cfg: ExtractConfig):
    if cfg.backend == BACKEND_STUB:
        return StubModel(cfg.model_id, hidden_dim=cfg.hidden_dim)
    if cfg.backend == BACKEND_STUB_CONST:
        return StubModel(cfg.model_id, hidden_dim=cfg.hidden_dim, constant=True)
    from .hf import HfAttentionTap  # deferred: torch/transformers are optional

    return HfAttentionTap(cfg.model_id, device=cfg.device)


def _sample_row(model, sample: Sample, layers: tuple[int, ...]) -> np.ndarray:
    pairs = []
    for layer in layers:
        acts = model.activations(sample, layer)
        layout = model.layout(sample)
        if layout.n_tokens != acts.shape[0]:
            raise SegmentationError(
                f"sample {sample.sample_id!r} layer {layer}: layout says "
                f"{layout.n_tokens} tokens, stream has {acts.shape[0]}"
            )
        if layout.n_visual < 1 or layout.n_text < 1:
            raise SegmentationError(
                f"sample {sample.sample_id!r} needs at least one token per modality "
                f"(visual {layout.n_visual}, text {layout.n_text})",
                hint="empty conversations have no text tokens to pool",
            )
        lo, hi = layout.visual_start, layout.visual_start + layout.n_visual
        if lo < 0 or hi > acts.shape[0]:
            raise SegmentationError(
                f"sample {sample.sample_id!r} layer {layer}: visual block "
                f"[{lo}, {hi}) falls outside the {acts.shape[0]}-token stream"
            )
        visual = acts[lo:hi]
        text = np.concatenate([acts[:lo], acts[hi:]], axis=0)
        pairs.append((visual, text))
    return compose_sample(pairs)


def extract(samples: list[Sample], cfg: ExtractConfig, out_prefix: str) -> np.ndarray:
    """Run the pipeline and write the store; returns the feature matrix."""
    cfg.validate()
    if not samples:
        raise ConfigError("dataset is empty")
    model = make_backend(cfg)
    depth = getattr(model, "depth", None)
    if depth is not None and max(cfg.layer_indices) >= depth:
        raise ConfigError(
            f"layer {max(cfg.layer_indices)} outside the model's depth [0, {depth})"
        )

    rows: np.ndarray | None = None
    for start in range(0, len(samples), cfg.batch_size):
        batch = samples[start : start + cfg.batch_size]
        for offset, sample in enumerate(batch):
            row = _sample_row(model, sample, tuple(cfg.layer_indices))
            if rows is None:
                rows = np.empty((len(samples), row.shape[0]), dtype=np.float32)
            rows[start + offset] = row

    hidden = rows.shape[1] // (2 * len(cfg.layer_indices))
    write_store(
        rows,
        sample_ids=[s.sample_id for s in samples],
        task_labels=task_labels(samples),
        layer_indices=list(cfg.layer_indices),
        hidden_dim=hidden,
        reference_model=cfg.model_id,
        prefix=out_prefix,
    )
    return rows
