"""Synthetic datasets with planted clusters, and selection diagnostics.

The generator plants equi-similar unit centers (orthogonal by default),
then scatters points in the tangent plane of their center with a hard
angular cap, so "every point within N degrees of its center" holds by
construction rather than with high probability. Each planted cluster
carries a task label; the returned manifest and ground-truth assignment
let tests measure how well a selection covers the plant.

Diagnostics: per-task counts, planted-cluster coverage, task entropy
(bits), and a Gini coefficient over task shares. A nearest-to-global-
centroid baseline is included as the diversity strawman.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, ValidationError
from .rng import stream_rng
from .store import DatasetManifest, FeatureMatrix
from .validation import as_2d_float64

TRUTH_SUFFIX = ".truth.json"
TRUTH_VERSION = 1


@dataclass
class SynthSpec:
    """Recipe for one planted-cluster dataset.

    points_per_cluster accepts an int (same size everywhere), a
    (low, high) range sampled per cluster, or an explicit per-cluster
    list. dim must be even (the manifest models one tapped layer of
    hidden size dim/2) and at least n_clusters_true (+1 when
    inter_cluster_sim > 0, which tilts every center toward a shared
    direction to hit the requested pairwise cosine).
    """

    n_clusters_true: int
    points_per_cluster: int | tuple[int, int] | list[int]
    dim: int
    angular_spread_deg: float
    inter_cluster_sim: float = 0.0
    task_labels: list[str] | None = None
    seed: int = 0

    def resolve_counts(self, rng: np.random.Generator) -> np.ndarray:
        ppc = self.points_per_cluster
        if isinstance(ppc, int):
            counts = np.full(self.n_clusters_true, ppc, dtype=np.int64)
        elif isinstance(ppc, tuple):
            low, high = ppc
            if low > high or low < 1:
                raise ConfigError(f"bad points_per_cluster range {ppc}")
            counts = rng.integers(low, high + 1, size=self.n_clusters_true).astype(np.int64)
        else:
            counts = np.asarray(list(ppc), dtype=np.int64)
            if counts.shape[0] != self.n_clusters_true:
                raise ConfigError(
                    f"points_per_cluster lists {counts.shape[0]} clusters, "
                    f"expected {self.n_clusters_true}"
                )
        if np.any(counts < 1):
            raise ConfigError("every planted cluster needs at least one point")
        return counts

    def validate(self) -> None:
        if self.n_clusters_true < 1:
            raise ConfigError(f"n_clusters_true must be >= 1, got {self.n_clusters_true}")
        if self.dim % 2 != 0:
            raise ConfigError(
                f"dim must be even, got {self.dim}",
                hint="the manifest models one tapped layer, so dim = 2 * hidden_dim",
            )
        needed = self.n_clusters_true + (1 if self.inter_cluster_sim > 0 else 0)
        if self.dim < needed:
            raise ConfigError(
                f"dim {self.dim} too small to plant {self.n_clusters_true} centers "
                f"at pairwise similarity {self.inter_cluster_sim} (need >= {needed})"
            )
        if not 0.0 <= self.inter_cluster_sim < 1.0:
            raise ConfigError(
                f"inter_cluster_sim must lie in [0, 1), got {self.inter_cluster_sim}"
            )
        if self.angular_spread_deg < 0 or self.angular_spread_deg >= 90:
            raise ConfigError(
                f"angular_spread_deg must lie in [0, 90), got {self.angular_spread_deg}"
            )
        if self.task_labels is not None and len(self.task_labels) != self.n_clusters_true:
            raise ConfigError("task_labels must list one label per planted cluster")

    def effective_task_labels(self) -> list[str]:
        if self.task_labels is not None:
            return list(self.task_labels)
        return [f"task-{i:02d}" for i in range(self.n_clusters_true)]


def _planted_centers(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Unit centers with exact pairwise cosine inter_cluster_sim."""
    k = spec.n_clusters_true
    extra = 1 if spec.inter_cluster_sim > 0 else 0
    raw = rng.standard_normal((spec.dim, k + extra))
    q, r = np.linalg.qr(raw)
    # Fix the QR sign ambiguity so the construction is canonical.
    q = q * np.sign(np.diag(r))
    basis = q.T
    if not extra:
        return basis[:k]
    shared = basis[k]
    s = spec.inter_cluster_sim
    return math.sqrt(1.0 - s) * basis[:k] + math.sqrt(s) * shared


def generate(spec: SynthSpec) -> tuple[FeatureMatrix, DatasetManifest, np.ndarray]:
    """Sample a planted dataset: features, manifest, ground-truth labels."""
    spec.validate()
    rng = stream_rng(spec.seed, "synth")
    counts = spec.resolve_counts(rng)
    centers = _planted_centers(spec, rng)
    spread_rad = math.radians(spec.angular_spread_deg)
    max_tangent = math.tan(spread_rad)
    sigma = max_tangent / math.sqrt(spec.dim)

    blocks: list[np.ndarray] = []
    truth: list[np.ndarray] = []
    for cluster_id, m in enumerate(counts):
        center = centers[cluster_id]
        noise = rng.standard_normal((int(m), spec.dim)) * sigma
        noise -= np.outer(noise @ center, center)  # keep noise tangent to the sphere
        lengths = np.linalg.norm(noise, axis=1)
        over = lengths > max_tangent
        if np.any(over):
            # Hard cap: no point strays beyond the configured angle.
            noise[over] *= (max_tangent / lengths[over])[:, None]
        points = center[None, :] + noise
        points /= np.linalg.norm(points, axis=1)[:, None]
        blocks.append(points)
        truth.append(np.full(int(m), cluster_id, dtype=np.int64))

    data = np.concatenate(blocks, axis=0).astype(np.float32)
    assignment = np.concatenate(truth)
    labels = spec.effective_task_labels()
    n = int(counts.sum())
    manifest = DatasetManifest(
        sample_ids=[f"synth-{i:06d}" for i in range(n)],
        task_labels=[labels[c] for c in assignment],
        layer_indices=[0],
        hidden_dim=spec.dim // 2,
        reference_model="synthetic",
    )
    matrix = FeatureMatrix(data)
    matrix.validate()
    return matrix, manifest, assignment


def truth_path(prefix: str) -> str:
    return prefix + TRUTH_SUFFIX


def save_truth(assignment: np.ndarray, cluster_task_labels: list[str], prefix: str) -> None:
    obj = {
        "version": TRUTH_VERSION,
        "n_clusters_true": len(cluster_task_labels),
        "cluster_task_labels": list(cluster_task_labels),
        "assignment": [int(a) for a in assignment],
    }
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    tmp = truth_path(prefix) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, truth_path(prefix))


def load_truth(prefix: str) -> tuple[np.ndarray, list[str]]:
    path = truth_path(prefix)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from None
    try:
        if obj["version"] != TRUTH_VERSION:
            raise FormatError(f"{path}: unsupported truth version {obj['version']!r}")
        assignment = np.asarray(obj["assignment"], dtype=np.int64)
        labels = [str(v) for v in obj["cluster_task_labels"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed truth file ({exc})") from None
    if assignment.size and (assignment.min() < 0 or assignment.max() >= len(labels)):
        raise FormatError(f"{path}: assignment references unknown planted clusters")
    return assignment, labels


@dataclass
class SelectionReport:
    """How a selection spreads over tasks and planted clusters."""

    per_task_counts: dict[str, int]
    coverage: float  # fraction of planted clusters hit at least once
    entropy_bits: float  # Shannon entropy of the task shares
    gini: float  # inequality of task shares over the task universe
    n_selected: int = 0

    def __post_init__(self):
        if not self.n_selected:
            self.n_selected = sum(self.per_task_counts.values())

    def validate(self) -> None:
        if sum(self.per_task_counts.values()) != self.n_selected:
            raise ValidationError("per-task counts do not sum to the selection size")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValidationError(f"coverage {self.coverage} outside [0, 1]")
        if self.entropy_bits < 0:
            raise ValidationError("entropy cannot be negative")
        if not 0.0 <= self.gini <= 1.0:
            raise ValidationError(f"gini {self.gini} outside [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "per_task_counts": dict(sorted(self.per_task_counts.items())),
            "coverage": self.coverage,
            "entropy_bits": self.entropy_bits,
            "gini": self.gini,
            "n_selected": self.n_selected,
        }


def entropy_bits(counts) -> float:
    """Shannon entropy (base 2) of a count vector."""
    arr = np.asarray(list(counts), dtype=np.float64)
    if arr.size == 0 or np.any(arr < 0):
        raise ValidationError("entropy needs nonnegative counts")
    total = arr.sum()
    if total <= 0:
        raise ValidationError("entropy needs at least one positive count")
    shares = arr[arr > 0] / total
    return float(-(shares * np.log2(shares)).sum())


def gini_coefficient(counts) -> float:
    """Gini inequality of shares; 0 for uniform, 1 - 1/n for one spike."""
    arr = np.asarray(list(counts), dtype=np.float64)
    if arr.size == 0 or np.any(arr < 0):
        raise ValidationError("gini needs nonnegative counts")
    total = arr.sum()
    if total <= 0:
        raise ValidationError("gini needs at least one positive count")
    shares = arr / total
    diffs = np.abs(shares[:, None] - shares[None, :]).sum()
    return float(diffs / (2 * arr.size))


def evaluate_selection(
    selected_indices,
    truth_assignment,
    manifest: DatasetManifest,
    n_clusters_true: int | None = None,
) -> SelectionReport:
    """Score a selection against the planted structure."""
    truth = np.asarray(truth_assignment, dtype=np.int64)
    if truth.shape[0] != manifest.n_samples:
        raise ValidationError(
            f"truth covers {truth.shape[0]} samples, manifest lists {manifest.n_samples}"
        )
    idx = np.asarray(selected_indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ValidationError("selection must be a non-empty 1-D index list")
    if idx.min() < 0 or idx.max() >= manifest.n_samples:
        raise ValidationError("selection references unknown sample indices")

    labels = manifest.effective_task_labels()
    universe = sorted(set(labels))
    counts = {task: 0 for task in universe}
    for i in idx:
        counts[labels[int(i)]] += 1

    if n_clusters_true is None:
        n_clusters_true = int(truth.max()) + 1
    covered = np.unique(truth[idx]).size
    report = SelectionReport(
        per_task_counts=counts,
        coverage=covered / n_clusters_true,
        entropy_bits=entropy_bits(list(counts.values())),
        gini=gini_coefficient(list(counts.values())),
        n_selected=int(idx.size),
    )
    report.validate()
    return report


def select_by_global_centroid(features, n_select: int) -> np.ndarray:
    """Baseline: the n samples nearest the dataset's single mean direction.

    This is the "no clustering" strawman; on planted data it piles onto
    the largest clusters, which is exactly the failure mode the
    cluster-budgeted pipeline avoids.
    """
    rows = as_2d_float64(features, "features")
    if not 1 <= n_select <= rows.shape[0]:
        raise ValidationError(f"n_select {n_select} outside [1, {rows.shape[0]}]")
    mean = rows.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-30:
        raise ValidationError("global centroid has zero norm; baseline undefined")
    sims = rows @ (mean / norm)
    order = np.argsort(-sims, kind="stable")
    return np.sort(order[:n_select])
