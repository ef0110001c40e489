"""Cluster-level scores and sampling budgets.

Three quantities drive how many samples each cluster contributes:

* transfer proxy: mean cosine between a cluster's centroid and the
  target clusters' centroids (by default every other cluster). Stands in
  for measured cross-task transfer, with which it correlates.
* density: mean Gaussian-kernel similarity over distinct member pairs;
  1 means the cluster collapsed to a point. Large clusters are estimated
  on a seeded uniform subsample (cap configurable, exact when the cap is
  None or not exceeded).
* budgets: softmax over transfer/(tau * density) gives per-cluster
  probabilities; the integer budgets come from largest-remainder
  rounding with any excess over a cluster's size redistributed to the
  remaining clusters by probability mass.

A loss-table path computes the real transferability from measured
fine-tuning losses, used to validate the proxy (Pearson r).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, ValidationError
from .kernels import gaussian_kernel
from .validation import as_2d_float64

DEFAULT_TAU = 0.1
DEFAULT_DENSITY_CAP = 512

SCORES_SUFFIX = ".scores.json"
SCORES_VERSION = 1


def transfer_proxy(centroids, cluster_id: int, target_ids) -> float:
    """Mean cosine between one centroid and the target centroids."""
    cen = as_2d_float64(centroids, "centroids")
    targets = np.asarray(target_ids, dtype=np.int64)
    if targets.size == 0:
        raise ValidationError("target set is empty; transfer proxy is undefined")
    if targets.min() < 0 or targets.max() >= cen.shape[0]:
        raise ValidationError("target ids outside [0, k)")
    if not 0 <= cluster_id < cen.shape[0]:
        raise ValidationError(f"cluster_id {cluster_id} outside [0, {cen.shape[0]})")
    sims = cen[targets] @ cen[cluster_id]
    return float(np.mean(sims))


def transfer_proxy_all(centroids, include_self: bool = False) -> np.ndarray:
    """Transfer proxy of every cluster against all the others.

    With ``include_self`` the cluster itself joins its target set
    (adding a constant-ish +1/k term); the default excludes it.
    """
    cen = as_2d_float64(centroids, "centroids")
    k = cen.shape[0]
    gram = cen @ cen.T
    if include_self:
        return gram.mean(axis=1)
    if k < 2:
        raise ValidationError(
            "transfer proxy needs at least 2 clusters when the source is excluded"
        )
    return (gram.sum(axis=1) - np.diag(gram)) / (k - 1)


def density(
    features,
    cap: int | None = DEFAULT_DENSITY_CAP,
    seed: int = 0,
    bandwidth: float = 1.0,
) -> float:
    """Mean Gaussian-kernel similarity over distinct member pairs.

    Clusters larger than ``cap`` are estimated on a seeded uniform
    subsample of ``cap`` members; ``cap=None`` forces the exact
    computation. A singleton cluster has density 1 by convention.
    """
    rows = as_2d_float64(features, "cluster features")
    m = rows.shape[0]
    if cap is not None and cap < 2:
        raise ConfigError(f"density cap must be >= 2 or None, got {cap}")
    if m == 1:
        return 1.0
    if cap is not None and m > cap:
        rng = np.random.default_rng(seed)
        keep = rng.choice(m, size=cap, replace=False)
        rows = rows[np.sort(keep)]
        m = cap
    gram = gaussian_kernel(rows, rows, bandwidth=bandwidth)
    total = float(gram.sum() - np.trace(gram))
    return total / (m * (m - 1))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax in float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def _largest_remainder(quota: np.ndarray, total: int) -> np.ndarray:
    """Round nonnegative quotas summing to ``total`` into integers.

    Floors first, then hands the leftover units to the largest
    fractional parts, ties toward the lower index.
    """
    floors = np.floor(quota).astype(np.int64)
    leftover = int(total - floors.sum())
    if leftover < 0 or leftover > quota.size:
        raise ValidationError(
            f"quota rounding went inconsistent (leftover {leftover} for {quota.size} entries)"
        )
    if leftover:
        fractions = quota - floors
        order = np.lexsort((np.arange(quota.size), -fractions))
        floors[order[:leftover]] += 1
    return floors


@dataclass
class ClusterScores:
    """Per-cluster scores plus the integer budgets derived from them."""

    transfer: np.ndarray  # transfer proxy per cluster
    density: np.ndarray
    probability: np.ndarray  # softmax shares, sums to 1
    budget: np.ndarray  # integer samples per cluster, sums to n_core
    tau: float
    density_cap: int | None = DEFAULT_DENSITY_CAP
    seed: int = 0
    include_self_in_targets: bool = False
    kernel_bandwidth: float = 1.0

    @property
    def k(self) -> int:
        return int(self.budget.shape[0])

    @property
    def n_core(self) -> int:
        return int(self.budget.sum())

    def validate(self, cluster_sizes=None) -> None:
        k = self.k
        for name in ("transfer", "density", "probability", "budget"):
            arr = getattr(self, name)
            if arr.ndim != 1 or arr.shape[0] != k:
                raise ValidationError(f"scores field {name} must have shape ({k},)")
        if np.any(self.density <= 0) or np.any(self.density > 1.0 + 1e-12):
            raise ValidationError("density values must lie in (0, 1]")
        if abs(float(self.probability.sum()) - 1.0) > 1e-9:
            raise ValidationError(
                f"probabilities sum to {float(self.probability.sum()):.12f}, expected 1"
            )
        if np.any(self.budget < 0):
            raise ValidationError("budgets must be nonnegative")
        if cluster_sizes is not None:
            sizes = np.asarray(cluster_sizes, dtype=np.int64)
            over = np.flatnonzero(self.budget > sizes)
            if over.size:
                i = int(over[0])
                raise ValidationError(
                    f"cluster {i} budget {int(self.budget[i])} exceeds its size {int(sizes[i])}"
                )


def allocate_budgets(
    transfer,
    density_values,
    tau: float,
    cluster_sizes,
    n_core: int,
    density_cap: int | None = DEFAULT_DENSITY_CAP,
    seed: int = 0,
    include_self_in_targets: bool = False,
    kernel_bandwidth: float = 1.0,
) -> ClusterScores:
    """Convert scores into integer per-cluster budgets summing to ``n_core``.

    Softmax over transfer/(tau * density), largest-remainder rounding,
    then clusters allocated more than their size are capped and the
    surplus is re-split over the remaining clusters by probability mass.
    """
    s = np.asarray(transfer, dtype=np.float64)
    d = np.asarray(density_values, dtype=np.float64)
    sizes = np.asarray(cluster_sizes, dtype=np.int64)
    if s.ndim != 1 or s.shape != d.shape or s.shape != sizes.shape:
        raise ValidationError("transfer, density, and cluster_sizes must be same-length vectors")
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if np.any(d <= 0) or np.any(d > 1.0 + 1e-12):
        raise ValidationError("density values must lie in (0, 1]")
    if np.any(sizes < 1):
        raise ValidationError("cluster sizes must be >= 1")
    total = int(sizes.sum())
    if not 1 <= n_core <= total:
        raise ValidationError(
            f"n_core {n_core} outside [1, {total}] for these clusters",
            hint="the requested coreset cannot exceed the dataset size",
        )

    probability = softmax(s / (tau * d))
    budget = np.zeros_like(sizes)
    capped = np.zeros(sizes.shape[0], dtype=bool)
    remaining = n_core
    while True:
        active = np.flatnonzero(~capped)
        if active.size == 0:
            if remaining != 0:
                raise ValidationError("budget redistribution ran out of clusters")
            break
        mass = float(probability[active].sum())
        if mass <= 0.0:
            # Degenerate softmax underflow: split what's left uniformly.
            quota = np.full(active.size, remaining / active.size)
        else:
            quota = remaining * probability[active] / mass
        candidate = _largest_remainder(quota, remaining)
        over = candidate > sizes[active]
        if not np.any(over):
            budget[active] = candidate
            break
        hit = active[over]
        budget[hit] = sizes[hit]
        capped[hit] = True
        remaining -= int(sizes[hit].sum())

    scores = ClusterScores(
        transfer=s,
        density=d,
        probability=probability,
        budget=budget,
        tau=float(tau),
        density_cap=density_cap,
        seed=seed,
        include_self_in_targets=include_self_in_targets,
        kernel_bandwidth=float(kernel_bandwidth),
    )
    scores.validate(cluster_sizes=sizes)
    if scores.n_core != n_core:
        raise ValidationError(f"budgets sum to {scores.n_core}, expected {n_core}")
    return scores


@dataclass
class TransferLossTable:
    """Measured fine-tuning losses for transferability computation.

    ``loss_joint[i, j]`` is the loss on target j after training on
    source i jointly with j; ``loss_solo[j]`` is the loss after training
    on j alone.
    """

    sources: list[int]
    targets: list[int]
    loss_joint: np.ndarray  # (n_sources, n_targets)
    loss_solo: np.ndarray  # (n_targets,)

    def validate(self) -> None:
        joint = np.asarray(self.loss_joint, dtype=np.float64)
        solo = np.asarray(self.loss_solo, dtype=np.float64)
        if joint.shape != (len(self.sources), len(self.targets)):
            raise ValidationError(
                f"loss_joint shape {joint.shape} does not match "
                f"{len(self.sources)} sources x {len(self.targets)} targets"
            )
        if solo.shape != (len(self.targets),):
            raise ValidationError("loss_solo length must match the target list")
        if not (np.all(np.isfinite(joint)) and np.all(np.isfinite(solo))):
            raise ValidationError("losses must be finite")
        if np.any(joint < 0) or np.any(solo < 0):
            raise ValidationError("losses must be nonnegative")


def transferability_from_losses(table: TransferLossTable) -> np.ndarray:
    """Mean per-target loss reduction each source brings over solo training."""
    table.validate()
    joint = np.asarray(table.loss_joint, dtype=np.float64)
    solo = np.asarray(table.loss_solo, dtype=np.float64)
    return (solo[None, :] - joint).mean(axis=1)


def load_loss_tables(joint_csv: str, solo_csv: str) -> TransferLossTable:
    """Read the long-form loss CSVs.

    ``joint_csv`` columns: source, target, loss_joint (one row per
    pair, every source x target pair present exactly once).
    ``solo_csv`` columns: target, loss_solo.
    """
    pair_losses: dict[tuple[int, int], float] = {}
    with open(joint_csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"source", "target", "loss_joint"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise FormatError(f"{joint_csv}: expected columns {sorted(required)}")
        for line, row in enumerate(reader, start=2):
            try:
                key = (int(row["source"]), int(row["target"]))
                value = float(row["loss_joint"])
            except (TypeError, ValueError):
                raise FormatError(f"{joint_csv}:{line}: malformed row {row}") from None
            if key in pair_losses:
                raise FormatError(f"{joint_csv}:{line}: duplicate pair {key}")
            pair_losses[key] = value
    solo_losses: dict[int, float] = {}
    with open(solo_csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"target", "loss_solo"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise FormatError(f"{solo_csv}: expected columns {sorted(required)}")
        for line, row in enumerate(reader, start=2):
            try:
                target = int(row["target"])
                value = float(row["loss_solo"])
            except (TypeError, ValueError):
                raise FormatError(f"{solo_csv}:{line}: malformed row {row}") from None
            if target in solo_losses:
                raise FormatError(f"{solo_csv}:{line}: duplicate target {target}")
            solo_losses[target] = value

    if not pair_losses:
        raise FormatError(f"{joint_csv}: no loss rows")
    sources = sorted({s for s, _ in pair_losses})
    targets = sorted(solo_losses)
    joint = np.empty((len(sources), len(targets)), dtype=np.float64)
    for i, s in enumerate(sources):
        for j, t in enumerate(targets):
            if (s, t) not in pair_losses:
                raise FormatError(f"{joint_csv}: missing loss for source {s}, target {t}")
            joint[i, j] = pair_losses[(s, t)]
    extras = {t for _, t in pair_losses} - set(targets)
    if extras:
        raise FormatError(f"{joint_csv}: targets {sorted(extras)} missing from {solo_csv}")
    solo = np.array([solo_losses[t] for t in targets], dtype=np.float64)
    table = TransferLossTable(sources=sources, targets=targets, loss_joint=joint, loss_solo=solo)
    table.validate()
    return table


def pearson(x, y) -> float:
    """Pearson correlation of two equal-length vectors."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValidationError("pearson needs two 1-D vectors of equal length")
    if a.shape[0] < 2:
        raise ValidationError("pearson needs at least 2 points")
    da = a - a.mean()
    db = b - b.mean()
    var_a = float(da @ da)
    var_b = float(db @ db)
    if var_a == 0.0 or var_b == 0.0:
        raise ValidationError("pearson is undefined for a zero-variance input")
    return float((da @ db) / math.sqrt(var_a * var_b))


def scores_path(prefix: str) -> str:
    return prefix + SCORES_SUFFIX


def save_scores(scores: ClusterScores, prefix: str) -> None:
    scores.validate()
    obj = {
        "version": SCORES_VERSION,
        "tau": scores.tau,
        "density_cap": scores.density_cap,
        "seed": scores.seed,
        "include_self_in_targets": scores.include_self_in_targets,
        "kernel_bandwidth": scores.kernel_bandwidth,
        "n_core": scores.n_core,
        "S": [float(v) for v in scores.transfer],
        "D": [float(v) for v in scores.density],
        "P": [float(v) for v in scores.probability],
        "budgets": [int(v) for v in scores.budget],
    }
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    tmp = scores_path(prefix) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, scores_path(prefix))


def load_scores(prefix: str) -> ClusterScores:
    path = scores_path(prefix)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: scores root must be an object")
    if obj.get("version") != SCORES_VERSION:
        raise FormatError(f"{path}: unsupported scores version {obj.get('version')!r}")
    try:
        scores = ClusterScores(
            transfer=np.asarray(obj["S"], dtype=np.float64),
            density=np.asarray(obj["D"], dtype=np.float64),
            probability=np.asarray(obj["P"], dtype=np.float64),
            budget=np.asarray(obj["budgets"], dtype=np.int64),
            tau=float(obj["tau"]),
            density_cap=obj.get("density_cap"),
            seed=int(obj.get("seed", 0)),
            include_self_in_targets=bool(obj.get("include_self_in_targets", False)),
            kernel_bandwidth=float(obj.get("kernel_bandwidth", 1.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed scores file ({exc})") from None
    try:
        scores.validate()
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return scores
