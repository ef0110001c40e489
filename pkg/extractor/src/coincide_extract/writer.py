"""Feature-store emitter.

Implements the on-disk contract the selection engine reads, from this
side of the fence: a 25-byte little-endian header
(magic ``COINCIDE``, u32 format version, u64 row count, u32 feature
dimension, u8 dtype tag 0 = float32) followed by the row-major float32
payload, plus a JSON manifest. Kept dependency-free on purpose — the
two packages share a byte layout, not code.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import ActivationError, ConfigError

STORE_MAGIC = b"COINCIDE"
STORE_VERSION = 1
DTYPE_FLOAT32 = 0
HEADER_FORMAT = "<8sIQIB"
FEATURE_SUFFIX = ".feat"
MANIFEST_SUFFIX = ".manifest.json"
UNIT_NORM_TOLERANCE = 1e-4


def feature_path(prefix: str) -> str:
    return prefix + FEATURE_SUFFIX


def manifest_path(prefix: str) -> str:
    return prefix + MANIFEST_SUFFIX


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_store(
    rows: np.ndarray,
    sample_ids: list[str],
    task_labels: list[str],
    layer_indices: list[int],
    hidden_dim: int,
    reference_model: str,
    prefix: str,
) -> None:
    """Write ``<prefix>.feat`` and ``<prefix>.manifest.json``.

    Validates everything the reader will check, then writes each file
    atomically so a crash never leaves a torn artifact.
    """
    arr = np.ascontiguousarray(rows, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ActivationError(f"feature rows must be a non-empty 2-D matrix, got {arr.shape}")
    n, dim = arr.shape
    if dim != 2 * len(layer_indices) * hidden_dim:
        raise ConfigError(
            f"feature dimension {dim} != 2 * {len(layer_indices)} layers "
            f"* hidden {hidden_dim}"
        )
    if len(sample_ids) != n:
        raise ConfigError(f"{len(sample_ids)} sample ids for {n} rows")
    if task_labels and len(task_labels) != n:
        raise ConfigError(f"{len(task_labels)} task labels for {n} rows")
    if list(layer_indices) != sorted(set(layer_indices)):
        raise ConfigError("layer_indices must be strictly increasing")
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE)
    if bad.size:
        raise ActivationError(
            f"row {int(bad[0])} has norm {norms[int(bad[0])]:.6g}; "
            f"{bad.size} row(s) break the unit-norm contract"
        )

    header = struct.pack(HEADER_FORMAT, STORE_MAGIC, STORE_VERSION, n, dim, DTYPE_FLOAT32)
    _atomic_write(feature_path(prefix), header + arr.tobytes(order="C"))

    manifest = {
        "version": STORE_VERSION,
        "sample_ids": list(sample_ids),
        "task_labels": list(task_labels),
        "layer_indices": [int(v) for v in layer_indices],
        "num_layers_tapped": len(layer_indices),
        "hidden_dim": int(hidden_dim),
        "reference_model": reference_model,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    _atomic_write(manifest_path(prefix), text.encode("utf-8"))
