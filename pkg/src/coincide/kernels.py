"""Gaussian kernel over feature rows.

The pipeline measures similarity between feature vectors p, q as
``exp(-||p - q||^2 / bandwidth^2)`` with the bandwidth fixed at 1 by
default. Distances are computed in float64 via the Gram expansion with a
clip at zero, so the kernel never exceeds 1.
"""

from __future__ import annotations

import numpy as np


def pairwise_sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of ``x`` and rows of ``y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x_sq = np.einsum("ij,ij->i", x, x)
    y_sq = np.einsum("ij,ij->i", y, y)
    d = x_sq[:, None] + y_sq[None, :] - 2.0 * (x @ y.T)
    # Cancellation can leave tiny negatives for near-identical rows.
    np.maximum(d, 0.0, out=d)
    return d


def gaussian_kernel(x: np.ndarray, y: np.ndarray, bandwidth: float = 1.0) -> np.ndarray:
    """exp(-||p - q||^2 / bandwidth^2) for all row pairs."""
    d = pairwise_sq_dists(x, y)
    if bandwidth != 1.0:
        d /= bandwidth * bandwidth
    return np.exp(-d)
