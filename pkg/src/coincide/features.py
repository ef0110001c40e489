"""Turn per-layer token activations into unit-norm sample features.

For each tapped layer the visual and text token matrices are squashed
elementwise through tanh, mean-pooled over tokens, and L2-normalized,
giving one unit vector per modality. A sample's feature vector is the
concatenation of all layers' (visual, text) vectors scaled by
1/sqrt(2*M) so the result is itself unit-norm.

Pooling uses correctly-rounded summation (math.fsum), so the output is
bit-identical under token reordering and duplication. This module is
meant for test fixtures and desk-scale validation, not bulk extraction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .validation import as_2d_float64

_ZERO_NORM_FLOOR = 1e-30


@dataclass(frozen=True)
class LayerFeaturePair:
    """Unit-norm pooled (visual, text) vectors for one tapped layer."""

    u_visual: np.ndarray
    u_text: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return int(self.u_visual.shape[0])


def _pool_tanh_mean(tokens, name: str) -> np.ndarray:
    arr = as_2d_float64(tokens, name)
    squashed = np.tanh(arr)
    n_tokens = arr.shape[0]
    # fsum per dimension: exact, hence order- and duplication-invariant.
    pooled = np.array([math.fsum(col) / n_tokens for col in squashed.T], dtype=np.float64)
    return pooled


def _unit(vec: np.ndarray, name: str) -> np.ndarray:
    norm = math.sqrt(math.fsum(float(c) * float(c) for c in vec))
    if norm < _ZERO_NORM_FLOOR:
        raise ValidationError(
            f"{name} pooled to a zero vector; cannot normalize degenerate activations"
        )
    return vec / norm


def aggregate_layer(visual_tokens, text_tokens) -> LayerFeaturePair:
    """Pool one layer's token activations into unit (visual, text) vectors.

    Args:
        visual_tokens: (n_visual_tokens, hidden_dim) activation matrix.
        text_tokens: (n_text_tokens, hidden_dim) activation matrix.

    Raises:
        ValidationError: on empty/mismatched matrices or degenerate
            (zero after pooling) activations.
    """
    u_visual = _unit(_pool_tanh_mean(visual_tokens, "visual tokens"), "visual tokens")
    u_text = _unit(_pool_tanh_mean(text_tokens, "text tokens"), "text tokens")
    if u_visual.shape != u_text.shape:
        raise ValidationError(
            f"visual and text hidden dims differ: {u_visual.shape[0]} vs {u_text.shape[0]}"
        )
    return LayerFeaturePair(u_visual=u_visual, u_text=u_text)


def compose_multimodal(pairs: Sequence[LayerFeaturePair]) -> np.ndarray:
    """Concatenate per-layer pairs into one unit-norm feature vector.

    The layout is [visual_1, text_1, ..., visual_M, text_M] scaled by
    1/sqrt(2*M); with unit inputs the output norm is 1 up to float error.
    """
    if not pairs:
        raise ValidationError("need at least one layer pair to compose features")
    dim = pairs[0].hidden_dim
    for i, pair in enumerate(pairs):
        if pair.u_visual.shape[0] != dim or pair.u_text.shape[0] != dim:
            raise ValidationError(f"layer pair {i} hidden_dim differs from layer 0 ({dim})")
    blocks: list[np.ndarray] = []
    for pair in pairs:
        blocks.append(pair.u_visual)
        blocks.append(pair.u_text)
    out = np.concatenate(blocks) / math.sqrt(2 * len(pairs))
    norm = float(np.linalg.norm(out))
    if abs(norm - 1.0) > 1e-6:
        raise ValidationError(f"composed feature norm {norm:.8f} is off unit; inputs not unit?")
    return out


def features_from_tokens(layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Aggregate a full sample: a (visual, text) matrix pair per layer."""
    return compose_multimodal([aggregate_layer(v, t) for v, t in layers])


def load_token_fixture(path: str) -> list[list[tuple[np.ndarray, np.ndarray]]]:
    """Load a JSON token-activation fixture.

    Schema: ``[{"layers": [{"visual": [[...]], "text": [[...]]}, ...]}, ...]``
    i.e. a list of samples, each holding per-layer token matrices.
    """
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, list):
        raise ValidationError(f"{path}: fixture root must be a list of samples")
    samples = []
    for i, entry in enumerate(obj):
        if not isinstance(entry, dict) or "layers" not in entry:
            raise ValidationError(f"{path}: sample {i} must be an object with a 'layers' key")
        layers = []
        for j, layer in enumerate(entry["layers"]):
            try:
                visual = np.asarray(layer["visual"], dtype=np.float64)
                text = np.asarray(layer["text"], dtype=np.float64)
            except (KeyError, TypeError, ValueError):
                raise ValidationError(
                    f"{path}: sample {i} layer {j} needs 'visual' and 'text' matrices"
                ) from None
            layers.append((visual, text))
        samples.append(layers)
    return samples
