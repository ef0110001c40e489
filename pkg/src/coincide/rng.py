"""Named deterministic random streams.

All stochastic stages derive their generator from the single top-level
seed plus a stream name. Stages therefore reproduce bit-identically
whether they run inside the chained pipeline or standalone, and adding a
new consumer of randomness never shifts another stage's stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, stream: str) -> int:
    """Derive a 64-bit child seed for a named stream."""
    payload = f"{seed}\x1f{stream}".encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    """Generator for ``stream``, fully determined by (seed, stream)."""
    return np.random.default_rng(derive_seed(seed, stream))
