"""Deterministic stand-in for the reference model.

Every test and offline run works without weights, a GPU, or network
access: activations are drawn from a generator seeded by hashing
(model id, sample id, layer, modality), so the same inputs always
produce the same bytes. The constant variant emits all-ones
activations, collapsing every sample to one identical unit row — handy
for pipeline plumbing checks.

Token layout comes from the model itself (`layout()`), mirroring how
the real backend reads the boundary out of the processed inputs rather
than re-deriving it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .dataset import Sample
from .errors import ConfigError

DEFAULT_MODEL_ID = "bczhou/TinyLLaVA-2.0B"
DEFAULT_LAYER_INDICES = (4, 8, 12, 16, 20)
STUB_DEPTH = 24
STUB_VISUAL_TOKENS = 16


@dataclass(frozen=True)
class TokenLayout:
    """How a sample's token stream splits into modalities.

    The visual block occupies ``[visual_start, visual_start + n_visual)``
    inside the stream; every other position is text. The stub always
    puts the visual block first; the real backend reports wherever the
    processor actually placed the image patches.
    """

    n_visual: int
    n_text: int
    visual_start: int = 0

    @property
    def n_tokens(self) -> int:
        return self.n_visual + self.n_text


def _seed(model_id: str, sample_id: str, layer: int, modality: str) -> int:
    payload = f"{model_id}\x1f{sample_id}\x1f{layer}\x1f{modality}".encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


class StubModel:
    """Hash-seeded activation source with a fixed layer budget."""

    def __init__(
        self,
        model_id: str = DEFAULT_MODEL_ID,
        hidden_dim: int = 32,
        constant: bool = False,
    ):
        if hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {hidden_dim}")
        self.model_id = model_id
        self.hidden_dim = hidden_dim
        self.constant = constant
        self.depth = STUB_DEPTH

    def layout(self, sample: Sample) -> TokenLayout:
        """Token boundary for one sample: fixed visual patch count, one
        text token per whitespace-separated word."""
        n_text = len(sample.text.split())
        return TokenLayout(n_visual=STUB_VISUAL_TOKENS, n_text=n_text)

    def activations(self, sample: Sample, layer: int) -> np.ndarray:
        """Float32 (n_tokens, hidden_dim) stream for one tapped layer."""
        if not 0 <= layer < self.depth:
            raise ConfigError(
                f"layer {layer} outside the model's depth [0, {self.depth})"
            )
        layout = self.layout(sample)
        if self.constant:
            return np.ones((layout.n_tokens, self.hidden_dim), dtype=np.float32)
        parts = []
        for modality, count in (("visual", layout.n_visual), ("text", layout.n_text)):
            rng = np.random.default_rng(
                _seed(self.model_id, sample.sample_id, layer, modality)
            )
            parts.append(
                rng.standard_normal((count, self.hidden_dim)).astype(np.float32)
            )
        return np.concatenate(parts, axis=0)
