"""End-to-end coreset selection as one estimator.

fit(X) clusters the unit-norm rows with spherical k-means, scores each
cluster (transfer proxy against the other clusters, kernel density
inside), converts the scores into integer per-cluster budgets, then
picks that many representatives per cluster with the configured
strategy. transform(X) returns the selected rows.

The CLI stages call the same two pipeline functions defined here
(compute_cluster_scores / run_selection), so the in-memory estimator
and the file-based pipeline agree.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .cluster import ClusterModel, SphericalKMeans
from .errors import ConfigError
from .parallel import resolve_threads, thread_map
from .rng import derive_seed, stream_rng
from .sampling import (
    STRATEGIES,
    STRATEGY_MMD_GREEDY,
    STRATEGY_NEAREST_CENTROID,
    CoresetSelection,
    assemble,
    select_mmd_greedy,
    select_nearest_centroid,
    select_random,
)
from .scoring import (
    DEFAULT_DENSITY_CAP,
    DEFAULT_TAU,
    ClusterScores,
    allocate_budgets,
    density,
    transfer_proxy_all,
)
from .validation import as_2d_float64, check_unit_rows


def resolve_n_core(n_samples: int, ratio: float | None, n_core: int | None) -> int:
    """Resolve the coreset size from exactly one of ratio / n_core.

    A ratio maps to round(ratio * n_samples) (banker's rounding, like
    Python's round), clamped to at least 1.
    """
    if (ratio is None) == (n_core is None):
        raise ConfigError(
            "exactly one of sampling ratio and n_core must be given",
            hint="pass --ratio or --n-core, not both",
        )
    if n_core is not None:
        size = int(n_core)
    else:
        if not 0.0 < ratio <= 1.0:
            raise ConfigError(f"sampling ratio must lie in (0, 1], got {ratio}")
        size = max(1, round(ratio * n_samples))
    if not 1 <= size <= n_samples:
        raise ConfigError(f"coreset size {size} outside [1, {n_samples}]")
    return size


def compute_cluster_scores(
    features,
    model: ClusterModel,
    n_core: int,
    tau: float = DEFAULT_TAU,
    density_cap: int | None = DEFAULT_DENSITY_CAP,
    seed: int = 0,
    include_self_in_targets: bool = False,
    kernel_bandwidth: float = 1.0,
    threads: int | None = None,
) -> ClusterScores:
    """Transfer proxy, density, and budgets for every cluster of a model.

    Per-cluster densities run in parallel; each cluster's subsample
    stream is derived from (seed, "density/<cluster id>"), so results
    do not depend on the worker count.
    """
    rows = as_2d_float64(features, "features")
    model.validate()
    workers = resolve_threads(threads)
    transfer = transfer_proxy_all(model.centroids, include_self=include_self_in_targets)
    sizes = model.cluster_sizes()

    def cluster_density(cluster_id: int) -> float:
        members = model.members(cluster_id)
        return density(
            rows[members],
            cap=density_cap,
            seed=derive_seed(seed, f"density/{cluster_id}"),
            bandwidth=kernel_bandwidth,
        )

    densities = np.array(thread_map(cluster_density, range(model.k), workers))
    return allocate_budgets(
        transfer,
        densities,
        tau=tau,
        cluster_sizes=sizes,
        n_core=n_core,
        density_cap=density_cap,
        seed=seed,
        include_self_in_targets=include_self_in_targets,
        kernel_bandwidth=kernel_bandwidth,
    )


def run_selection(
    features,
    model: ClusterModel,
    scores: ClusterScores,
    strategy: str = STRATEGY_MMD_GREEDY,
    seed: int = 0,
    mmd_include_self_pairs: bool = True,
    kernel_bandwidth: float = 1.0,
    threads: int | None = None,
) -> CoresetSelection:
    """Pick each cluster's budgeted representatives and merge them.

    Clusters run in parallel and merge in cluster-id order; the random
    strategy draws from a per-cluster stream derived from
    (seed, "select/<cluster id>"). Output is identical for any worker
    count.
    """
    rows = as_2d_float64(features, "features")
    model.validate()
    if strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    workers = resolve_threads(threads)

    def pick(cluster_id: int) -> tuple[int, list[int]]:
        budget = int(scores.budget[cluster_id])
        if budget == 0:
            return cluster_id, []
        members = model.members(cluster_id)
        cluster_rows = rows[members]
        if strategy == STRATEGY_MMD_GREEDY:
            local = select_mmd_greedy(
                cluster_rows,
                budget,
                include_self_pairs=mmd_include_self_pairs,
                bandwidth=kernel_bandwidth,
            )
        elif strategy == STRATEGY_NEAREST_CENTROID:
            local = select_nearest_centroid(cluster_rows, model.centroids[cluster_id], budget)
        else:
            rng = stream_rng(seed, f"select/{cluster_id}")
            local = select_random(np.arange(members.shape[0]), budget, rng)
        return cluster_id, [int(members[i]) for i in local]

    picks = thread_map(pick, range(model.k), workers)
    per_cluster = {cluster_id: chosen for cluster_id, chosen in picks if chosen}
    return assemble(
        per_cluster,
        assignment=model.assignment,
        strategy=strategy,
        seed=seed,
        budgets=scores.budget,
    )


class CoincideSelector(BaseEstimator):
    """Cluster-budgeted coreset selector over unit-norm feature rows.

    Parameters mirror the pipeline stages: ``k``/``max_iterations``/
    ``tolerance``/``init`` drive the spherical k-means step; ``tau``,
    ``density_cap``, ``include_self_in_targets`` drive scoring; exactly
    one of ``ratio`` / ``n_core`` fixes the coreset size; ``strategy``
    picks the intra-cluster selector. ``seed`` feeds every derived
    random stream; ``threads`` only affects speed, never results.

    Attributes (after fit): ``model_`` (ClusterModel), ``scores_``
    (ClusterScores), ``selection_`` (CoresetSelection),
    ``selected_indices_`` (sorted global row indices), ``n_core_``.
    """

    def __init__(
        self,
        k: int = 8,
        ratio: float | None = None,
        n_core: int | None = None,
        tau: float = DEFAULT_TAU,
        strategy: str = STRATEGY_MMD_GREEDY,
        seed: int = 0,
        density_cap: int | None = DEFAULT_DENSITY_CAP,
        include_self_in_targets: bool = False,
        mmd_include_self_pairs: bool = True,
        kernel_bandwidth: float = 1.0,
        max_iterations: int = 100,
        tolerance: float | None = None,
        init: str = "kmeans++",
        threads: int | None = None,
    ):
        self.k = k
        self.ratio = ratio
        self.n_core = n_core
        self.tau = tau
        self.strategy = strategy
        self.seed = seed
        self.density_cap = density_cap
        self.include_self_in_targets = include_self_in_targets
        self.mmd_include_self_pairs = mmd_include_self_pairs
        self.kernel_bandwidth = kernel_bandwidth
        self.max_iterations = max_iterations
        self.tolerance = tolerance
        self.init = init
        self.threads = threads

    def fit(self, X, y=None):
        rows = as_2d_float64(X, "X")
        # Density and MMD read raw row magnitudes, so enforce the same
        # unit-norm contract here that the feature files carry.
        check_unit_rows(rows, name="X")
        size = resolve_n_core(rows.shape[0], self.ratio, self.n_core)
        kmeans = SphericalKMeans(
            k=self.k,
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
            seed=self.seed,
            init=self.init,
            threads=self.threads,
        ).fit(rows)
        model = kmeans.to_model()
        scores = compute_cluster_scores(
            rows,
            model,
            n_core=size,
            tau=self.tau,
            density_cap=self.density_cap,
            seed=self.seed,
            include_self_in_targets=self.include_self_in_targets,
            kernel_bandwidth=self.kernel_bandwidth,
            threads=self.threads,
        )
        selection = run_selection(
            rows,
            model,
            scores,
            strategy=self.strategy,
            seed=self.seed,
            mmd_include_self_pairs=self.mmd_include_self_pairs,
            kernel_bandwidth=self.kernel_bandwidth,
            threads=self.threads,
        )
        self.kmeans_ = kmeans
        self.model_ = model
        self.scores_ = scores
        self.selection_ = selection
        self.selected_indices_ = selection.merged.copy()
        self.n_core_ = size
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "selected_indices_"):
            raise ConfigError("selector is not fitted; call fit(X) first")
        arr = np.asarray(X)
        if arr.ndim != 2 or arr.shape[0] <= int(self.selected_indices_[-1]):
            raise ConfigError(
                "transform input must cover the rows the selector was fitted on"
            )
        return arr[self.selected_indices_]

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X, y).transform(X)
