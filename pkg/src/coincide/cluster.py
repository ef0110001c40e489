"""Spherical k-means over unit-norm feature rows.

Centroids are L2-normalized means of their members; similarity is
cosine. On unit vectors argmax-cosine and argmin-Euclidean agree, so the
usual k-means algebra carries over. The fit is full-batch Lloyd
iteration, deterministic for a fixed seed and bitwise independent of the
worker count: samples are assigned in fixed 1024-row chunks merged in
order, and centroid updates reduce members in ascending sample order.

The fitted model persists to ``<prefix>.clusters``: a 28-byte header
(magic ``COINCLUS``, u32 version, u32 k, u32 feature_dim, u64 n_samples)
followed by float32 centroid rows and the u32 assignment vector, all
little-endian.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .errors import (
    BadMagicError,
    ConfigError,
    FormatError,
    TruncatedFileError,
    UnsupportedVersionError,
    ValidationError,
)
from .parallel import resolve_threads, thread_map
from .rng import stream_rng
from .validation import as_2d_float64, normalized_rows

CLUSTERS_MAGIC = b"COINCLUS"
CLUSTERS_VERSION = 1
CLUSTERS_SUFFIX = ".clusters"
_CLUSTERS_HEADER = struct.Struct("<8sIIIQ")  # 28 bytes

ASSIGN_CHUNK = 1024

INIT_KMEANS_PLUS_PLUS = "kmeans++"
INIT_RANDOM_ROWS = "random-rows"
_INITS = (INIT_KMEANS_PLUS_PLUS, INIT_RANDOM_ROWS)


@dataclass
class KMeansConfig:
    """Knobs for one spherical k-means fit."""

    k: int
    max_iterations: int = 100
    tolerance: float | None = None
    seed: int = 0
    init: str = INIT_KMEANS_PLUS_PLUS

    def validate(self, n_samples: int | None = None) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.tolerance is not None and self.tolerance < 0:
            raise ConfigError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.init not in _INITS:
            raise ConfigError(f"init must be one of {_INITS}, got {self.init!r}")
        if n_samples is not None and self.k > n_samples:
            raise ConfigError(
                f"k={self.k} exceeds the number of samples ({n_samples})",
                hint="pick k <= n_samples",
            )

    def effective_tolerance(self, n_samples: int) -> float:
        # Objective improvement below this stops the loop early.
        if self.tolerance is not None:
            return float(self.tolerance)
        return 1e-6 * n_samples


@dataclass
class ClusterModel:
    """A fitted clustering: unit centroids plus the assignment vector."""

    centroids: np.ndarray  # (k, feature_dim) float64, unit rows
    assignment: np.ndarray  # (n_samples,) int64
    objective: float | None = None  # total cosine to assigned centroids
    iterations_run: int | None = None

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.centroids.shape[1])

    @property
    def n_samples(self) -> int:
        return int(self.assignment.shape[0])

    def validate(self) -> None:
        cen = as_2d_float64(self.centroids, "centroids")
        norms = np.linalg.norm(cen, axis=1)
        off = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
        if off.size:
            i = int(off[0])
            raise ValidationError(f"centroid {i} has norm {norms[i]:.8f}, expected 1 within 1e-6")
        if self.assignment.ndim != 1:
            raise ValidationError("assignment must be a 1-D vector")
        if self.assignment.size and (
            self.assignment.min() < 0 or self.assignment.max() >= self.k
        ):
            raise ValidationError("assignment references cluster ids outside [0, k)")

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    def members(self, cluster_id: int) -> np.ndarray:
        """Global sample indices of one cluster, ascending."""
        return np.flatnonzero(self.assignment == cluster_id)


def assign(features, centroids, threads: int | None = None) -> np.ndarray:
    """Map every feature row to its argmax-cosine centroid.

    Ties break toward the lowest cluster id. Rows are normalized in
    float64 before the comparison, so inputs only need nonzero norms.
    """
    x_hat = normalized_rows(features, "features")
    cen = as_2d_float64(centroids, "centroids")
    if cen.shape[1] != x_hat.shape[1]:
        raise ValidationError(
            f"features have dim {x_hat.shape[1]} but centroids have dim {cen.shape[1]}"
        )
    labels, _ = _assign_chunks(x_hat, cen, resolve_threads(threads))
    return labels


def _assign_chunks(
    x_hat: np.ndarray, centroids: np.ndarray, threads: int
) -> tuple[np.ndarray, np.ndarray]:
    """Argmax-cosine assignment plus the winning cosine per sample."""
    n = x_hat.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    bounds = [(s, min(s + ASSIGN_CHUNK, n)) for s in range(0, n, ASSIGN_CHUNK)]

    def work(span: tuple[int, int]) -> None:
        lo, hi = span
        sims = x_hat[lo:hi] @ centroids.T
        idx = np.argmax(sims, axis=1)  # first max: lowest cluster id wins ties
        labels[lo:hi] = idx
        best[lo:hi] = np.take_along_axis(sims, idx[:, None], axis=1)[:, 0]

    thread_map(work, bounds, threads)
    return labels, best


def _init_kmeanspp(x_hat: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding adapted to cosine: weight by (1 - best cosine)."""
    n = x_hat.shape[0]
    chosen = [int(rng.integers(n))]
    best_cos = x_hat @ x_hat[chosen[0]]
    for _ in range(k - 1):
        weights = np.maximum(1.0 - best_cos, 0.0)
        weights[chosen] = 0.0
        total = weights.sum()
        if total <= 0.0:
            # All remaining rows duplicate a chosen seed; take the lowest unchosen index.
            mask = np.ones(n, dtype=bool)
            mask[chosen] = False
            nxt = int(np.flatnonzero(mask)[0])
        else:
            nxt = int(rng.choice(n, p=weights / total))
        chosen.append(nxt)
        best_cos = np.maximum(best_cos, x_hat @ x_hat[nxt])
    return x_hat[chosen].copy()


def _init_random_rows(x_hat: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    idx = rng.choice(x_hat.shape[0], size=k, replace=False)
    return x_hat[idx].copy()


def _update_centroids(
    x_hat: np.ndarray, labels: np.ndarray, k: int, previous: np.ndarray
) -> np.ndarray:
    """Unit-normalized member means; a zero-sum cluster keeps its old row.

    Members are summed in ascending sample order (stable sort +
    reduceat), independent of the assignment chunking above.
    """
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=k)
    starts = np.zeros(k, dtype=np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    sums = np.add.reduceat(x_hat[order], starts, axis=0)
    norms = np.linalg.norm(sums, axis=1)
    out = previous.copy()
    ok = norms >= 1e-12
    out[ok] = sums[ok] / norms[ok, None]
    return out


def _repair_empty(
    x_hat: np.ndarray,
    labels: np.ndarray,
    centroids: np.ndarray,
    best_cos: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reseed empty clusters with the worst-served sample.

    The stolen sample has the lowest cosine to its current centroid among
    samples whose cluster keeps >= 2 members; ties go to the lowest
    sample index. Its row becomes the empty cluster's centroid, so the
    objective only goes up (cos(x, x) = 1).
    """
    counts = np.bincount(labels, minlength=centroids.shape[0])
    empties = np.flatnonzero(counts == 0)
    if empties.size == 0:
        return labels, centroids, best_cos
    labels = labels.copy()
    centroids = centroids.copy()
    best_cos = best_cos.copy()
    for cluster_id in empties:
        donors = counts[labels] >= 2
        candidates = np.flatnonzero(donors)
        if candidates.size == 0:
            raise ValidationError("cannot repair empty cluster: no donor with >= 2 members")
        victim = int(candidates[np.argmin(best_cos[candidates])])
        counts[labels[victim]] -= 1
        labels[victim] = cluster_id
        counts[cluster_id] = 1
        centroids[cluster_id] = x_hat[victim]
        best_cos[victim] = 1.0
    return labels, centroids, best_cos


class SphericalKMeans(BaseEstimator, ClusterMixin):
    """Cosine k-means clusterer for unit-norm rows.

    Parameters
    ----------
    k : int
        Number of clusters (must not exceed the number of samples).
    max_iterations : int
        Upper bound on Lloyd iterations.
    tolerance : float or None
        Stop once the objective improves by less than this; None picks
        1e-6 per sample. Assignment stability also stops the loop.
    seed : int
        Master seed; the init stream is derived from it by name.
    init : {"kmeans++", "random-rows"}
        Seeding strategy. "kmeans++" weights candidates by one minus
        their best cosine to the seeds chosen so far.
    threads : int or None
        Worker threads for the assignment step. None defers to the
        COINCIDE_THREADS environment variable, then the CPU count.
        Results are bitwise identical for any value.

    Attributes
    ----------
    cluster_centers_ : (k, feature_dim) float64 unit rows.
    labels_ : (n_samples,) int64 assignment.
    objective_ : float, total cosine of samples to assigned centroids.
    objective_history_ : list of per-iteration objectives (non-decreasing).
    n_iter_ : iterations actually run.
    """

    def __init__(
        self,
        k: int = 8,
        max_iterations: int = 100,
        tolerance: float | None = None,
        seed: int = 0,
        init: str = INIT_KMEANS_PLUS_PLUS,
        threads: int | None = None,
    ):
        self.k = k
        self.max_iterations = max_iterations
        self.tolerance = tolerance
        self.seed = seed
        self.init = init
        self.threads = threads

    def fit(self, X, y=None):
        cfg = KMeansConfig(
            k=self.k,
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
            seed=self.seed,
            init=self.init,
        )
        x_hat = normalized_rows(X, "X")
        n = x_hat.shape[0]
        cfg.validate(n_samples=n)
        threads = resolve_threads(self.threads)
        rng = stream_rng(cfg.seed, "cluster-init")

        if cfg.init == INIT_KMEANS_PLUS_PLUS:
            centroids = _init_kmeanspp(x_hat, cfg.k, rng)
        else:
            centroids = _init_random_rows(x_hat, cfg.k, rng)

        labels, best = _assign_chunks(x_hat, centroids, threads)
        labels, centroids, best = _repair_empty(x_hat, labels, centroids, best)

        tol = cfg.effective_tolerance(n)
        history: list[float] = []
        previous_objective = -np.inf
        iterations = 0
        for _ in range(cfg.max_iterations):
            iterations += 1
            centroids = _update_centroids(x_hat, labels, cfg.k, centroids)
            new_labels, best = _assign_chunks(x_hat, centroids, threads)
            new_labels, centroids, best = _repair_empty(x_hat, new_labels, centroids, best)
            objective = float(np.sum(best))
            history.append(objective)
            stable = bool(np.array_equal(new_labels, labels))
            labels = new_labels
            if stable or objective - previous_objective < tol:
                previous_objective = objective
                break
            previous_objective = objective

        self.cluster_centers_ = centroids
        self.labels_ = labels
        self.objective_ = history[-1]
        self.objective_history_ = history
        self.n_iter_ = iterations
        return self

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return assign(X, self.cluster_centers_, threads=self.threads)

    def to_model(self) -> ClusterModel:
        self._check_fitted()
        return ClusterModel(
            centroids=self.cluster_centers_,
            assignment=self.labels_,
            objective=self.objective_,
            iterations_run=self.n_iter_,
        )

    def _check_fitted(self) -> None:
        if not hasattr(self, "cluster_centers_"):
            raise ValidationError("estimator is not fitted; call fit(X) first")


def clusters_path(prefix: str) -> str:
    return prefix + CLUSTERS_SUFFIX


def save_cluster_model(model: ClusterModel, prefix: str) -> None:
    """Write ``<prefix>.clusters`` (centroids as float32, assignment as u32)."""
    model.validate()
    if model.k >= 2**32 or model.feature_dim >= 2**32:
        raise ValidationError("k and feature_dim must fit in 32 bits for persistence")
    header = _CLUSTERS_HEADER.pack(
        CLUSTERS_MAGIC, CLUSTERS_VERSION, model.k, model.feature_dim, model.n_samples
    )
    centroids = np.ascontiguousarray(model.centroids, dtype="<f4")
    labels = np.ascontiguousarray(model.assignment, dtype="<u4")
    blob = header + centroids.tobytes() + labels.tobytes()
    tmp = clusters_path(prefix) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, clusters_path(prefix))


def load_cluster_model(prefix: str) -> ClusterModel:
    """Read ``<prefix>.clusters``; centroids come back as float64.

    The objective and iteration count are not part of the format, so
    they are None on the loaded model.
    """
    path = clusters_path(prefix)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _CLUSTERS_HEADER.size:
        raise TruncatedFileError(
            f"{path}: file is {len(blob)} bytes, shorter than the "
            f"{_CLUSTERS_HEADER.size}-byte header"
        )
    magic, version, k, feature_dim, n_samples = _CLUSTERS_HEADER.unpack(
        blob[: _CLUSTERS_HEADER.size]
    )
    if magic != CLUSTERS_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {CLUSTERS_MAGIC!r}")
    if version != CLUSTERS_VERSION:
        raise UnsupportedVersionError(
            f"{path}: clusters version {version} unsupported (expected {CLUSTERS_VERSION})"
        )
    body = blob[_CLUSTERS_HEADER.size:]
    centroid_bytes = k * feature_dim * 4
    expected = centroid_bytes + n_samples * 4
    if len(body) < expected:
        raise TruncatedFileError(f"{path}: body is {len(body)} bytes, header promises {expected}")
    if len(body) > expected:
        raise FormatError(f"{path}: {len(body) - expected} trailing bytes after the payload")
    centroids = (
        np.frombuffer(body[:centroid_bytes], dtype="<f4")
        .reshape(k, feature_dim)
        .astype(np.float64)
    )
    labels = np.frombuffer(body[centroid_bytes:], dtype="<u4").astype(np.int64)
    model = ClusterModel(centroids=centroids, assignment=labels)
    model.validate()
    return model
