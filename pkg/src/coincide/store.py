"""Binary feature files and their JSON manifests.

A dataset on disk is a pair of files sharing a path prefix:

``<prefix>.feat``
    25-byte little-endian header -- magic ``COINCIDE`` (8 bytes), u32
    format version, u64 n_samples, u32 feature_dim, u8 dtype code (0 =
    float32 little-endian) -- followed by the row-major float32 payload.

``<prefix>.manifest.json``
    UTF-8 JSON with per-sample identity and extraction metadata.

Byte-level layout and the manifest schema are documented in
``docs/format.md``. Writes validate first and go through a temp file +
rename, so a failed write never leaves a partial artifact behind.
"""

from __future__ import annotations

import json
import os
import struct
import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    FormatError,
    ManifestError,
    TruncatedFileError,
    UnsupportedVersionError,
    ValidationError,
)
from .validation import UNIT_NORM_TOLERANCE, check_finite, check_unit_rows

MAGIC = b"COINCIDE"
FORMAT_VERSION = 1
DTYPE_FLOAT32_LE = 0
MANIFEST_VERSION = 1

_HEADER = struct.Struct("<8sIQIB")
HEADER_SIZE = _HEADER.size  # 25 bytes

FEATURE_SUFFIX = ".feat"
MANIFEST_SUFFIX = ".manifest.json"


@dataclass(frozen=True)
class FeatureFileHeader:
    """Fixed-size header at the start of every ``.feat`` file."""

    n_samples: int
    feature_dim: int
    format_version: int = FORMAT_VERSION
    dtype_code: int = DTYPE_FLOAT32_LE

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC, self.format_version, self.n_samples, self.feature_dim, self.dtype_code
        )

    @classmethod
    def unpack(cls, raw: bytes, path: str = "<bytes>") -> "FeatureFileHeader":
        if len(raw) < HEADER_SIZE:
            raise TruncatedFileError(
                f"{path}: file is {len(raw)} bytes, shorter than the {HEADER_SIZE}-byte header"
            )
        magic, version, n_samples, feature_dim, dtype_code = _HEADER.unpack(raw[:HEADER_SIZE])
        if magic != MAGIC:
            raise BadMagicError(
                f"{path}: bad magic {magic!r}, expected {MAGIC!r}",
                hint="the file is not a feature file or was corrupted",
            )
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(
                f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
            )
        if dtype_code != DTYPE_FLOAT32_LE:
            raise UnsupportedVersionError(
                f"{path}: dtype code {dtype_code} unsupported (expected {DTYPE_FLOAT32_LE})"
            )
        return cls(
            n_samples=n_samples,
            feature_dim=feature_dim,
            format_version=version,
            dtype_code=dtype_code,
        )


@dataclass
class FeatureMatrix:
    """Dense per-sample feature rows, float32, one unit-norm row per sample."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got shape {arr.shape}")
        self.data = arr

    @property
    def n_samples(self) -> int:
        return int(self.data.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.data.shape[1])

    def validate(self, check_norms: bool = True, norm_tol: float = UNIT_NORM_TOLERANCE) -> None:
        if self.n_samples < 1 or self.feature_dim < 1:
            raise ValidationError(
                f"feature matrix must be non-empty, got shape {self.data.shape}"
            )
        check_finite(self.data, "feature matrix")
        if check_norms:
            check_unit_rows(self.data, tol=norm_tol, name="feature matrix")


@dataclass
class DatasetManifest:
    """Identity and extraction metadata for one feature file."""

    sample_ids: list[str]
    layer_indices: list[int]
    reference_model: str
    hidden_dim: int
    task_labels: list[str] = field(default_factory=list)
    version: int = MANIFEST_VERSION

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def num_layers_tapped(self) -> int:
        return len(self.layer_indices)

    def effective_task_labels(self) -> list[str]:
        """Per-sample labels; an absent list means every label is empty."""
        if self.task_labels:
            return list(self.task_labels)
        return [""] * self.n_samples

    def validate(self, n_samples: int | None = None, feature_dim: int | None = None) -> None:
        if self.version != MANIFEST_VERSION:
            raise ManifestError(
                f"manifest version {self.version} unsupported (expected {MANIFEST_VERSION})"
            )
        if not self.sample_ids:
            raise ManifestError("manifest has no sample_ids")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ManifestError("sample_ids contain duplicates")
        if self.task_labels and len(self.task_labels) != len(self.sample_ids):
            raise ManifestError(
                f"task_labels has {len(self.task_labels)} entries for "
                f"{len(self.sample_ids)} samples"
            )
        if not self.layer_indices:
            raise ManifestError("layer_indices is empty")
        if any(b <= a for a, b in zip(self.layer_indices, self.layer_indices[1:])):
            raise ManifestError(f"layer_indices must be strictly increasing: {self.layer_indices}")
        if self.hidden_dim < 1:
            raise ManifestError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if not self.reference_model:
            raise ManifestError("reference_model must be a non-empty string")
        if n_samples is not None and len(self.sample_ids) != n_samples:
            raise ManifestError(
                f"manifest lists {len(self.sample_ids)} samples but the matrix has {n_samples} rows"
            )
        if feature_dim is not None:
            expected = 2 * self.num_layers_tapped * self.hidden_dim
            if expected != feature_dim:
                raise ManifestError(
                    f"manifest implies feature_dim {expected} "
                    f"(2 x {self.num_layers_tapped} layers x hidden_dim {self.hidden_dim}) "
                    f"but the matrix has {feature_dim} columns"
                )

    def to_json_dict(self) -> dict:
        return {
            "version": self.version,
            "sample_ids": list(self.sample_ids),
            "task_labels": list(self.task_labels),
            "layer_indices": list(self.layer_indices),
            "num_layers_tapped": self.num_layers_tapped,
            "hidden_dim": self.hidden_dim,
            "reference_model": self.reference_model,
        }

    @classmethod
    def from_json_dict(cls, obj: object, path: str = "<json>") -> "DatasetManifest":
        if not isinstance(obj, dict):
            raise ManifestError(f"{path}: manifest root must be an object")
        required = {
            "version", "sample_ids", "layer_indices", "hidden_dim", "reference_model",
        }
        missing = sorted(required - obj.keys())
        if missing:
            raise ManifestError(f"{path}: manifest missing keys {missing}")
        if not _is_str_list(obj["sample_ids"]):
            raise ManifestError(f"{path}: sample_ids must be a list of strings")
        task_labels = obj.get("task_labels", [])
        if not _is_str_list(task_labels):
            raise ManifestError(f"{path}: task_labels must be a list of strings")
        layers = obj["layer_indices"]
        if not isinstance(layers, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in layers
        ):
            raise ManifestError(f"{path}: layer_indices must be a list of integers")
        if not isinstance(obj["version"], int) or not isinstance(obj["hidden_dim"], int):
            raise ManifestError(f"{path}: version and hidden_dim must be integers")
        if not isinstance(obj["reference_model"], str):
            raise ManifestError(f"{path}: reference_model must be a string")
        declared_m = obj.get("num_layers_tapped", len(layers))
        if declared_m != len(layers):
            raise ManifestError(
                f"{path}: num_layers_tapped is {declared_m} but layer_indices has "
                f"{len(layers)} entries"
            )
        manifest = cls(
            sample_ids=list(obj["sample_ids"]),
            task_labels=list(task_labels),
            layer_indices=list(layers),
            hidden_dim=obj["hidden_dim"],
            reference_model=obj["reference_model"],
            version=obj["version"],
        )
        try:
            manifest.validate()
        except ManifestError:
            raise
        except ValidationError as exc:
            raise ManifestError(f"{path}: {exc}") from None
        return manifest


def _is_str_list(value: object) -> bool:
    return isinstance(value, list) and all(isinstance(v, str) for v in value)


def _atomic_write_bytes(path: str, blob: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def feature_path(prefix: str) -> str:
    return prefix + FEATURE_SUFFIX


def manifest_path(prefix: str) -> str:
    return prefix + MANIFEST_SUFFIX


def write_features(matrix: FeatureMatrix, manifest: DatasetManifest, prefix: str) -> None:
    """Write ``<prefix>.feat`` and ``<prefix>.manifest.json``.

    Both artifacts are validated before anything touches the disk.
    """
    matrix.validate()
    manifest.validate(n_samples=matrix.n_samples, feature_dim=matrix.feature_dim)
    header = FeatureFileHeader(n_samples=matrix.n_samples, feature_dim=matrix.feature_dim)
    payload = matrix.data
    if sys.byteorder != "little":
        payload = payload.astype("<f4")
    _atomic_write_bytes(feature_path(prefix), header.pack() + payload.tobytes())
    text = json.dumps(manifest.to_json_dict(), indent=2, sort_keys=True) + "\n"
    _atomic_write_bytes(manifest_path(prefix), text.encode("utf-8"))


def read_manifest(prefix: str) -> DatasetManifest:
    """Read and validate just the manifest half of a dataset."""
    mpath = manifest_path(prefix)
    with open(mpath, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{mpath}: not valid JSON ({exc})") from None
    return DatasetManifest.from_json_dict(obj, path=mpath)


def read_features(
    prefix: str, skip_norm_check: bool = False
) -> tuple[FeatureMatrix, DatasetManifest]:
    """Read and cross-validate a feature file and its manifest."""
    feat_file = feature_path(prefix)
    with open(feat_file, "rb") as fh:
        blob = fh.read()
    header = FeatureFileHeader.unpack(blob, path=feat_file)
    expected = header.n_samples * header.feature_dim * 4
    payload = blob[HEADER_SIZE:]
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{feat_file}: payload is {len(payload)} bytes, header promises {expected}"
        )
    if len(payload) > expected:
        raise FormatError(
            f"{feat_file}: {len(payload) - expected} trailing bytes after the payload"
        )
    if header.n_samples < 1 or header.feature_dim < 1:
        raise FormatError(
            f"{feat_file}: header declares empty matrix "
            f"({header.n_samples} x {header.feature_dim})"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(header.n_samples, header.feature_dim)
    matrix = FeatureMatrix(data.copy())

    manifest = read_manifest(prefix)
    manifest.validate(n_samples=matrix.n_samples, feature_dim=matrix.feature_dim)
    matrix.validate(check_norms=not skip_norm_check)
    return matrix, manifest
