"""Shared test helpers."""

from __future__ import annotations

import os

import numpy as np
import pytest

FIXTURES_DIR = os.path.join(os.path.dirname(__file__), "fixtures")


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Random float64 rows on the unit sphere."""
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def unit_rows_f32(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Unit rows quantized to float32, as the feature store holds them."""
    return unit_rows(rng, n, dim).astype(np.float32)


@pytest.fixture
def fixtures_dir() -> str:
    return FIXTURES_DIR
