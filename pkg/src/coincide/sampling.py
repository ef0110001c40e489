"""Intra-cluster representative selection and coreset assembly.

The default strategy greedily grows a subset that minimizes the squared
maximum mean discrepancy (MMD) between the subset and its cluster under
the Gaussian kernel. With subset-average terms

    A(X, Y) = mean over pairs (p in X, q in Y) of exp(-||p - q||^2)

the objective for subset C' of cluster C is

    MMD^2 = A(C, C) + A(C', C') - 2 A(C, C').

Self-pairs count in the averages by default (the subset average runs
over all ordered pairs); ``include_self_pairs=False`` switches both
block averages to distinct pairs only, where a singleton subset's own
term is defined as 0. Each greedy step appends the candidate whose
addition yields the lowest objective, ties toward the lowest index, so
selection is reproducible without randomness. Bookkeeping is
incremental: per-candidate kernel sums are updated in O(1) per step and
the full n x n kernel matrix is never materialized.

Alternative strategies: nearest-to-centroid ranking and uniform random
sampling (the control policies).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ValidationError
from .kernels import gaussian_kernel
from .store import DatasetManifest
from .scoring import ClusterScores
from .validation import as_2d_float64, normalized_rows

CORESET_SUFFIX = ".coreset.json"
CORESET_VERSION = 1

STRATEGY_MMD_GREEDY = "mmd-greedy"
STRATEGY_NEAREST_CENTROID = "nearest-centroid"
STRATEGY_RANDOM = "random"
STRATEGIES = (STRATEGY_MMD_GREEDY, STRATEGY_NEAREST_CENTROID, STRATEGY_RANDOM)

_KERNEL_BLOCK = 2048


def _validate_subset(indices, n: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ValidationError("subset must be a non-empty 1-D index list")
    if idx.min() < 0 or idx.max() >= n:
        raise ValidationError(f"subset indices outside [0, {n})")
    if np.unique(idx).size != idx.size:
        raise ValidationError("subset contains duplicate indices")
    return idx


def _block_average(kernel_block: np.ndarray, include_self_pairs: bool, same_set: bool) -> float:
    """Average of one kernel block; optionally drop the diagonal."""
    total = float(kernel_block.sum())
    rows, cols = kernel_block.shape
    if same_set and not include_self_pairs:
        if rows < 2:
            return 0.0
        return (total - float(np.trace(kernel_block))) / (rows * (rows - 1))
    return total / (rows * cols)


def mmd_squared(
    cluster_features,
    subset_indices,
    include_self_pairs: bool = True,
    bandwidth: float = 1.0,
) -> float:
    """Squared MMD between a subset and its full cluster.

    Direct evaluator: materializes the kernel blocks, so it suits
    oracle checks and small clusters; the greedy path below never calls
    it.
    """
    rows = as_2d_float64(cluster_features, "cluster features")
    idx = _validate_subset(subset_indices, rows.shape[0])
    chosen = rows[idx]
    full = gaussian_kernel(rows, rows, bandwidth=bandwidth)
    cross = full[:, idx]
    sub = cross[idx, :]
    a_cc = _block_average(full, include_self_pairs, same_set=True)
    a_ss = _block_average(sub, include_self_pairs, same_set=True)
    a_cs = float(cross.sum()) / (rows.shape[0] * idx.size)
    return a_cc + a_ss - 2.0 * a_cs


@dataclass
class MmdState:
    """Incremental bookkeeping for the greedy MMD loop.

    ``sum_kernel_cross[j]`` tracks candidate j's kernel sum against the
    selected set; ``sum_kernel_selected_pairs`` tracks the selected-set
    pair sum under the active self-pair convention (all ordered pairs
    when self-pairs count, distinct ordered pairs otherwise).
    """

    const_term: float  # A(C, C), fixed per cluster
    mean_kernel_to_cluster: np.ndarray  # per candidate: mean kernel to all members
    include_self_pairs: bool
    bandwidth: float
    selected: list[int] = field(default_factory=list)
    sum_kernel_selected_pairs: float = 0.0
    sum_kernel_cross: np.ndarray | None = None
    sum_mean_selected: float = 0.0

    @classmethod
    def initialize(
        cls,
        cluster_features: np.ndarray,
        include_self_pairs: bool = True,
        bandwidth: float = 1.0,
    ) -> "MmdState":
        rows = as_2d_float64(cluster_features, "cluster features")
        n = rows.shape[0]
        column_sums = np.zeros(n, dtype=np.float64)
        for lo in range(0, n, _KERNEL_BLOCK):
            hi = min(lo + _KERNEL_BLOCK, n)
            block = gaussian_kernel(rows[lo:hi], rows, bandwidth=bandwidth)
            column_sums += block.sum(axis=0)
        mean_to_cluster = column_sums / n
        if include_self_pairs:
            const = float(column_sums.sum()) / (n * n)
        elif n > 1:
            const = (float(column_sums.sum()) - n) / (n * (n - 1))
        else:
            const = 0.0
        return cls(
            const_term=const,
            mean_kernel_to_cluster=mean_to_cluster,
            include_self_pairs=include_self_pairs,
            bandwidth=bandwidth,
            sum_kernel_cross=np.zeros(n, dtype=np.float64),
        )

    @property
    def n_candidates(self) -> int:
        return int(self.mean_kernel_to_cluster.shape[0])

    def candidate_objectives(self) -> np.ndarray:
        """MMD^2 of (selected + candidate) for every candidate at once."""
        m_next = len(self.selected) + 1
        cross = self.sum_kernel_cross
        if self.include_self_pairs:
            # Each candidate adds 2*cross[j] plus its own self-pair (kernel 1).
            pair_sum = self.sum_kernel_selected_pairs + 2.0 * cross + 1.0
            a_ss = pair_sum / (m_next * m_next)
        elif m_next == 1:
            a_ss = np.zeros(self.n_candidates, dtype=np.float64)
        else:
            pair_sum = self.sum_kernel_selected_pairs + 2.0 * cross
            a_ss = pair_sum / (m_next * (m_next - 1))
        a_cs = (self.sum_mean_selected + self.mean_kernel_to_cluster) / m_next
        return self.const_term + a_ss - 2.0 * a_cs

    def push(self, candidate: int, kernel_column: np.ndarray) -> None:
        """Commit one selection; ``kernel_column`` is d(., candidate)."""
        if candidate in self.selected:
            raise ValidationError(f"candidate {candidate} already selected")
        self.sum_kernel_selected_pairs += 2.0 * float(self.sum_kernel_cross[candidate])
        if self.include_self_pairs:
            self.sum_kernel_selected_pairs += 1.0
        self.sum_mean_selected += float(self.mean_kernel_to_cluster[candidate])
        self.sum_kernel_cross = self.sum_kernel_cross + kernel_column
        self.selected.append(int(candidate))

    def current_mmd_squared(self) -> float:
        """Objective of the selected set, from the incremental sums."""
        m = len(self.selected)
        if m == 0:
            raise ValidationError("no selection yet")
        if self.include_self_pairs:
            a_ss = self.sum_kernel_selected_pairs / (m * m)
        elif m > 1:
            a_ss = self.sum_kernel_selected_pairs / (m * (m - 1))
        else:
            a_ss = 0.0
        a_cs = self.sum_mean_selected / m
        return self.const_term + a_ss - 2.0 * a_cs


def select_mmd_greedy(
    cluster_features,
    n_select: int,
    include_self_pairs: bool = True,
    bandwidth: float = 1.0,
) -> list[int]:
    """Greedily pick ``n_select`` members minimizing MMD^2 to the cluster.

    Returns local (within-cluster) indices in selection order. Fully
    deterministic: ties break toward the lowest index.
    """
    rows = as_2d_float64(cluster_features, "cluster features")
    n = rows.shape[0]
    if not 1 <= n_select <= n:
        raise ValidationError(f"n_select {n_select} outside [1, {n}]")
    state = MmdState.initialize(rows, include_self_pairs=include_self_pairs, bandwidth=bandwidth)
    taken = np.zeros(n, dtype=bool)
    for _ in range(n_select):
        objective = state.candidate_objectives()
        objective[taken] = np.inf
        choice = int(np.argmin(objective))
        column = gaussian_kernel(rows, rows[choice : choice + 1], bandwidth=bandwidth)[:, 0]
        state.push(choice, column)
        taken[choice] = True
    return list(state.selected)


def select_nearest_centroid(cluster_features, centroid, n_select: int) -> list[int]:
    """Members ranked by cosine to the centroid, best first.

    Ties break toward the lower index (stable sort on the negated
    similarity).
    """
    rows = normalized_rows(cluster_features, "cluster features")
    n = rows.shape[0]
    if not 1 <= n_select <= n:
        raise ValidationError(f"n_select {n_select} outside [1, {n}]")
    center = np.asarray(centroid, dtype=np.float64)
    if center.ndim != 1 or center.shape[0] != rows.shape[1]:
        raise ValidationError("centroid dimension does not match the cluster features")
    norm = float(np.linalg.norm(center))
    if norm < 1e-30:
        raise ValidationError("centroid has zero norm")
    sims = rows @ (center / norm)
    order = np.argsort(-sims, kind="stable")
    return [int(i) for i in order[:n_select]]


def select_random(cluster_indices, n_select: int, rng: np.random.Generator) -> list[int]:
    """Uniform sample without replacement from an index list."""
    idx = np.asarray(cluster_indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ValidationError("cluster_indices must be a non-empty 1-D index list")
    if not 1 <= n_select <= idx.size:
        raise ValidationError(f"n_select {n_select} outside [1, {idx.size}]")
    picked = rng.choice(idx, size=n_select, replace=False)
    return [int(i) for i in picked]


@dataclass
class CoresetSelection:
    """Selected sample indices, per cluster and merged."""

    per_cluster: dict[int, list[int]]  # cluster id -> global indices, selection order
    merged: np.ndarray  # sorted global indices
    strategy: str
    seed: int

    @property
    def n_selected(self) -> int:
        return int(self.merged.shape[0])

    def validate(self, assignment=None, budgets=None) -> None:
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        seen: list[int] = []
        for cluster_id, indices in self.per_cluster.items():
            if len(set(indices)) != len(indices):
                raise ValidationError(f"cluster {cluster_id} selected an index twice")
            seen.extend(indices)
        if len(set(seen)) != len(seen):
            raise ValidationError("the same sample appears in two clusters' selections")
        if sorted(seen) != list(self.merged):
            raise ValidationError("merged list does not equal the union of per-cluster lists")
        if np.any(np.diff(self.merged) <= 0):
            raise ValidationError("merged indices must be strictly increasing")
        if assignment is not None:
            labels = np.asarray(assignment, dtype=np.int64)
            for cluster_id, indices in self.per_cluster.items():
                for i in indices:
                    if not 0 <= i < labels.shape[0]:
                        raise ValidationError(f"selected index {i} outside the dataset")
                    if labels[i] != cluster_id:
                        raise ValidationError(
                            f"sample {i} claimed by cluster {cluster_id} "
                            f"but assigned to {int(labels[i])}"
                        )
        if budgets is not None:
            budget_arr = np.asarray(budgets, dtype=np.int64)
            for cluster_id in np.flatnonzero(budget_arr):
                got = len(self.per_cluster.get(int(cluster_id), []))
                want = int(budget_arr[cluster_id])
                if got != want:
                    raise ValidationError(
                        f"cluster {int(cluster_id)} selected {got} samples, budget is {want}"
                    )


def assemble(
    per_cluster: dict[int, list[int]],
    assignment,
    strategy: str,
    seed: int,
    budgets=None,
) -> CoresetSelection:
    """Merge per-cluster picks into a validated CoresetSelection."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    merged_list: list[int] = []
    for indices in per_cluster.values():
        merged_list.extend(int(i) for i in indices)
    merged = np.array(sorted(merged_list), dtype=np.int64)
    selection = CoresetSelection(
        per_cluster={int(c): [int(i) for i in v] for c, v in per_cluster.items()},
        merged=merged,
        strategy=strategy,
        seed=seed,
    )
    selection.validate(assignment=assignment, budgets=budgets)
    return selection


def coreset_path(prefix: str) -> str:
    return prefix + CORESET_SUFFIX


def save_coreset(
    selection: CoresetSelection,
    manifest: DatasetManifest,
    scores: ClusterScores,
    prefix: str,
) -> None:
    """Write ``<prefix>.coreset.json`` with per-sample provenance."""
    selection.validate(budgets=scores.budget)
    n = manifest.n_samples
    if selection.n_selected and int(selection.merged[-1]) >= n:
        raise ValidationError("selection references samples beyond the manifest")
    clusters = []
    for cluster_id in range(scores.k):
        indices = selection.per_cluster.get(cluster_id, [])
        samples = [
            {
                "sample_id": manifest.sample_ids[i],
                "global_index": int(i),
                "rank": rank,
            }
            for rank, i in enumerate(indices)
        ]
        clusters.append(
            {
                "id": cluster_id,
                "budget": int(scores.budget[cluster_id]),
                "S": float(scores.transfer[cluster_id]),
                "D": float(scores.density[cluster_id]),
                "samples": samples,
            }
        )
    obj = {
        "version": CORESET_VERSION,
        "strategy": selection.strategy,
        "seed": selection.seed,
        "N_core": selection.n_selected,
        "clusters": clusters,
        "merged": [int(i) for i in selection.merged],
    }
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    tmp = coreset_path(prefix) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, coreset_path(prefix))


def load_coreset(path: str) -> tuple[CoresetSelection, list[dict]]:
    """Read a coreset file back; returns the selection and raw cluster blocks."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(obj, dict) or obj.get("version") != CORESET_VERSION:
        raise FormatError(f"{path}: unsupported coreset file")
    try:
        per_cluster = {
            int(block["id"]): [int(s["global_index"]) for s in block["samples"]]
            for block in obj["clusters"]
        }
        selection = CoresetSelection(
            per_cluster={c: v for c, v in per_cluster.items() if v},
            merged=np.asarray(obj["merged"], dtype=np.int64),
            strategy=obj["strategy"],
            seed=int(obj["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed coreset file ({exc})") from None
    if obj.get("N_core") != selection.n_selected:
        raise FormatError(
            f"{path}: N_core {obj.get('N_core')} does not match {selection.n_selected} "
            "merged indices"
        )
    try:
        selection.validate()
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return selection, obj["clusters"]
