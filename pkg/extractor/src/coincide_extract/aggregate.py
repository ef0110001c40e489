"""Token-activation aggregation: tanh, mean-pool, L2, concatenate.

All arithmetic stays in float32, the precision a device tensor pipeline
hands back. The downstream feature store accepts unit norms within
1e-4, which float32 pooling clears by orders of magnitude.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ActivationError


def pool_modality(tokens) -> np.ndarray:
    """One modality's tokens -> a unit-norm float32 vector.

    Squashes each activation through tanh, averages over the token
    axis, then L2-normalizes.
    """
    arr = np.asarray(tokens, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ActivationError(
            f"modality needs a non-empty (tokens, hidden) matrix, got shape {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise ActivationError("activations contain non-finite values")
    pooled = np.tanh(arr).mean(axis=0, dtype=np.float32)
    norm = float(np.linalg.norm(pooled))
    if norm < 1e-12:
        raise ActivationError(
            "pooled activations have zero norm and cannot be normalized",
            hint="tanh outputs cancelled exactly; check the activation tap",
        )
    return (pooled / np.float32(norm)).astype(np.float32)


def compose_sample(layer_pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Concatenate per-layer (visual, text) pools into one unit row.

    Layout [visual_1, text_1, ..., visual_M, text_M], scaled by
    1/sqrt(2M) so the concatenation of 2M unit vectors is unit-norm.
    """
    if not layer_pairs:
        raise ActivationError("need at least one tapped layer")
    parts: list[np.ndarray] = []
    for visual, text in layer_pairs:
        parts.append(pool_modality(visual))
        parts.append(pool_modality(text))
    widths = {p.shape[0] for p in parts}
    if len(widths) != 1:
        raise ActivationError(f"layers disagree on hidden size: {sorted(widths)}")
    scale = np.float32(1.0 / math.sqrt(len(parts)))
    return (np.concatenate(parts) * scale).astype(np.float32)
