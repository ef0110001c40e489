"""Cluster scores and budgets against brute-force oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest

from coincide import (
    ConfigError,
    FormatError,
    TransferLossTable,
    ValidationError,
    allocate_budgets,
    density,
    load_loss_tables,
    load_scores,
    pearson,
    save_scores,
    transfer_proxy,
    transfer_proxy_all,
    transferability_from_losses,
)
from coincide.scoring import softmax

from conftest import unit_rows


def oracle_transfer(centroids, source: int, targets) -> float:
    total = 0.0
    for t in targets:
        dot = 0.0
        for a, b in zip(centroids[source], centroids[t]):
            dot += float(a) * float(b)
        total += dot
    return total / len(targets)


def oracle_density(rows) -> float:
    m = len(rows)
    total = 0.0
    for p in range(m):
        for q in range(m):
            if p == q:
                continue
            sq = 0.0
            for a, b in zip(rows[p], rows[q]):
                sq += (float(a) - float(b)) ** 2
            total += math.exp(-sq)
    return total / (m * (m - 1))


def oracle_pearson(x, y) -> float:
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = math.fsum((a - mx) ** 2 for a in x)
    vy = math.fsum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


# ---------------------------------------------------------------- transfer


def test_transfer_proxy_of_identical_centroids_is_one():
    centroids = np.tile(np.array([[0.6, 0.8]]), (3, 1))
    assert transfer_proxy(centroids, 0, [1, 2]) == pytest.approx(1.0, abs=1e-12)


def test_transfer_proxy_of_orthogonal_targets_is_zero():
    assert transfer_proxy(np.eye(4), 0, [1, 2, 3]) == pytest.approx(0.0, abs=0)


def test_transfer_proxy_matches_oracle():
    rng = np.random.default_rng(31)
    for _ in range(10):
        centroids = unit_rows(rng, 6, 5)
        targets = [t for t in range(6) if t != 2]
        got = transfer_proxy(centroids, 2, targets)
        assert got == pytest.approx(oracle_transfer(centroids, 2, targets), abs=1e-12)


def test_transfer_proxy_all_excludes_self_by_default():
    rng = np.random.default_rng(32)
    centroids = unit_rows(rng, 5, 7)
    got = transfer_proxy_all(centroids)
    for i in range(5):
        targets = [t for t in range(5) if t != i]
        assert got[i] == pytest.approx(oracle_transfer(centroids, i, targets), abs=1e-12)
    with_self = transfer_proxy_all(centroids, include_self=True)
    for i in range(5):
        assert with_self[i] == pytest.approx(
            oracle_transfer(centroids, i, list(range(5))), abs=1e-12
        )


def test_transfer_proxy_empty_targets_rejected():
    with pytest.raises(ValidationError):
        transfer_proxy(np.eye(3), 0, [])
    with pytest.raises(ValidationError):
        transfer_proxy_all(np.eye(2)[:1])


# ---------------------------------------------------------------- density


def test_density_of_identical_points_is_one():
    rows = np.tile(np.array([[0.0, 1.0, 0.0]]), (6, 1))
    assert density(rows) == pytest.approx(1.0, abs=1e-12)


def test_density_two_points_at_known_distance():
    # ||p - q||^2 = ln 2 gives kernel exactly 1/2.
    gap = math.sqrt(math.log(2.0))
    angle = math.acos(1.0 - math.log(2.0) / 2.0)
    rows = np.array([[1.0, 0.0], [math.cos(angle), math.sin(angle)]])
    assert np.linalg.norm(rows[0] - rows[1]) == pytest.approx(gap, abs=1e-12)
    assert density(rows) == pytest.approx(0.5, abs=1e-12)


def test_density_singleton_is_one_and_empty_rejected():
    assert density(np.array([[1.0, 0.0]])) == 1.0
    with pytest.raises(ValidationError):
        density(np.zeros((0, 3)))


def test_density_matches_oracle():
    rng = np.random.default_rng(34)
    for _ in range(8):
        rows = unit_rows(rng, int(rng.integers(2, 30)), 6)
        assert density(rows, cap=None) == pytest.approx(oracle_density(rows), abs=1e-12)


def test_density_cap_at_or_above_size_is_exact():
    rng = np.random.default_rng(35)
    rows = unit_rows(rng, 20, 5)
    assert density(rows, cap=20) == density(rows, cap=None)
    assert density(rows, cap=500) == density(rows, cap=None)


def test_density_subsample_is_deterministic_and_near_exact():
    rng = np.random.default_rng(36)
    center = unit_rows(rng, 1, 12)[0]
    noise = rng.standard_normal((1000, 12)) * 0.05
    rows = center + noise
    rows /= np.linalg.norm(rows, axis=1)[:, None]
    exact = density(rows, cap=None)
    sub_a = density(rows, cap=200, seed=4)
    sub_b = density(rows, cap=200, seed=4)
    assert sub_a == sub_b
    # Pairs inside the subsample share points, so the mean behaves like an
    # order-2 U-statistic: Var ~ 4 * var(per-point mean kernel) / m.
    from coincide import gaussian_kernel

    gram = gaussian_kernel(rows, rows)
    np.fill_diagonal(gram, 0.0)
    point_means = gram.sum(axis=1) / 999
    se = math.sqrt(4.0 * point_means.var() / 200)
    assert abs(sub_a - exact) <= 4 * se


def test_density_bounds():
    rng = np.random.default_rng(37)
    for _ in range(10):
        rows = unit_rows(rng, 12, 4)
        value = density(rows)
        assert 0.0 < value <= 1.0


# ---------------------------------------------------------------- budgets


def test_softmax_known_logits():
    # logits (2, 1): shares e/(e+1) of the shifted values.
    probs = softmax(np.array([2.0, 1.0]))
    assert probs[0] == pytest.approx(0.7310585786300049, abs=1e-15)
    assert probs[1] == pytest.approx(0.2689414213699951, abs=1e-15)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(38)
    logits = rng.standard_normal(9)
    base = softmax(logits)
    shifted = softmax(logits + 123.456)
    assert np.allclose(base, shifted, rtol=0, atol=1e-12)


def test_equal_scores_split_evenly():
    scores = allocate_budgets(
        transfer=[0.5, 0.5],
        density_values=[1.0, 1.0],
        tau=0.1,
        cluster_sizes=[10, 10],
        n_core=10,
    )
    assert scores.probability.tolist() == [0.5, 0.5]
    assert scores.budget.tolist() == [5, 5]


def test_budget_cap_redistributes():
    # Probabilities (0.55, 0.45) ask for (5.5, 4.5) -> (6, 4); the first
    # cluster holds only 4, so the surplus lands on the second.
    s = np.array([0.55, 0.45])
    scores = allocate_budgets(
        transfer=np.log(s) * 0.1,  # softmax(log(s)/tau * tau) recovers s
        density_values=[1.0, 1.0],
        tau=0.1,
        cluster_sizes=[4, 100],
        n_core=10,
    )
    assert np.allclose(scores.probability, s, atol=1e-12)
    assert scores.budget.tolist() == [4, 6]


def test_budgets_sum_exactly_over_random_draws():
    rng = np.random.default_rng(39)
    for trial in range(100):
        k = int(rng.integers(2, 12))
        sizes = rng.integers(1, 60, size=k)
        transfer = rng.uniform(-1, 1, size=k)
        dens = rng.uniform(0.05, 1.0, size=k)
        tau = float(rng.uniform(0.05, 2.0))
        n_core = int(rng.integers(1, sizes.sum() + 1))
        scores = allocate_budgets(transfer, dens, tau, sizes, n_core)
        assert int(scores.budget.sum()) == n_core
        assert np.all(scores.budget <= sizes)
        assert np.all(scores.budget >= 0)


def test_higher_transfer_earns_higher_budget():
    scores = allocate_budgets(
        transfer=[0.9, 0.1],
        density_values=[0.8, 0.8],
        tau=0.1,
        cluster_sizes=[100, 100],
        n_core=50,
    )
    assert scores.budget[0] > scores.budget[1]


def test_huge_tau_flattens_to_uniform():
    rng = np.random.default_rng(40)
    k = 16
    transfer = rng.uniform(-1, 1, size=k)
    dens = rng.uniform(0.5, 1.0, size=k)
    scores = allocate_budgets(transfer, dens, 1e6, np.full(k, 50), n_core=160)
    assert np.max(np.abs(scores.probability - 1.0 / k)) < 1e-6


def test_requesting_full_dataset_caps_everything():
    rng = np.random.default_rng(41)
    sizes = rng.integers(1, 20, size=6)
    scores = allocate_budgets(
        rng.uniform(-1, 1, 6), rng.uniform(0.1, 1.0, 6), 0.1, sizes, int(sizes.sum())
    )
    assert scores.budget.tolist() == sizes.tolist()


def test_budget_errors():
    with pytest.raises(ValidationError):
        allocate_budgets([0.5], [1.0], 0.1, [4], 5)  # more than the dataset
    with pytest.raises(ConfigError):
        allocate_budgets([0.5, 0.1], [1.0, 1.0], 0.0, [4, 4], 2)  # bad tau
    with pytest.raises(ValidationError):
        allocate_budgets([0.5, 0.1], [0.0, 1.0], 0.1, [4, 4], 2)  # density 0


# ---------------------------------------------------- measured transferability


def test_transferability_zero_when_joint_equals_solo():
    table = TransferLossTable(
        sources=[0],
        targets=[0, 1],
        loss_joint=np.array([[1.0, 2.0]]),
        loss_solo=np.array([1.0, 2.0]),
    )
    assert transferability_from_losses(table).tolist() == [0.0]


def test_transferability_known_value():
    # Solo losses (1, 2), joint (0.5, 1): mean gain (0.5 + 1)/2 = 0.75.
    table = TransferLossTable(
        sources=[3],
        targets=[0, 1],
        loss_joint=np.array([[0.5, 1.0]]),
        loss_solo=np.array([1.0, 2.0]),
    )
    assert transferability_from_losses(table).tolist() == [0.75]


def test_transferability_matches_oracle_and_scales_linearly():
    rng = np.random.default_rng(43)
    joint = rng.uniform(0.1, 2.0, size=(4, 5))
    solo = rng.uniform(0.1, 2.0, size=5)
    table = TransferLossTable(
        sources=list(range(4)), targets=list(range(5)), loss_joint=joint, loss_solo=solo
    )
    got = transferability_from_losses(table)
    for i in range(4):
        expected = math.fsum(solo[j] - joint[i, j] for j in range(5)) / 5
        assert got[i] == pytest.approx(expected, abs=1e-12)
    doubled = TransferLossTable(
        sources=list(range(4)),
        targets=list(range(5)),
        loss_joint=joint * 2,
        loss_solo=solo * 2,
    )
    assert np.allclose(transferability_from_losses(doubled), got * 2, atol=1e-12)


def test_loss_table_validation():
    with pytest.raises(ValidationError):
        TransferLossTable(
            sources=[0],
            targets=[0],
            loss_joint=np.array([[-1.0]]),
            loss_solo=np.array([1.0]),
        ).validate()


def test_loss_csv_roundtrip(tmp_path):
    joint = tmp_path / "joint.csv"
    solo = tmp_path / "solo.csv"
    joint.write_text(
        "source,target,loss_joint\n0,0,0.5\n0,1,1.0\n1,0,0.7\n1,1,0.9\n"
    )
    solo.write_text("target,loss_solo\n0,1.0\n1,2.0\n")
    table = load_loss_tables(str(joint), str(solo))
    assert table.sources == [0, 1]
    assert table.targets == [0, 1]
    got = transferability_from_losses(table)
    assert got[0] == pytest.approx((0.5 + 1.0) / 2, abs=1e-12)
    assert got[1] == pytest.approx((0.3 + 1.1) / 2, abs=1e-12)


def test_loss_csv_missing_pair_rejected(tmp_path):
    joint = tmp_path / "joint.csv"
    solo = tmp_path / "solo.csv"
    joint.write_text("source,target,loss_joint\n0,0,0.5\n1,1,0.9\n")
    solo.write_text("target,loss_solo\n0,1.0\n1,2.0\n")
    with pytest.raises(FormatError):
        load_loss_tables(str(joint), str(solo))


# ---------------------------------------------------------------- pearson


def test_pearson_perfect_and_inverse():
    x = [1.0, 2.0, 3.0, 4.0]
    assert pearson(x, [2.0, 4.0, 6.0, 8.0]) == pytest.approx(1.0, abs=1e-12)
    assert pearson(x, [-1.0, -2.0, -3.0, -4.0]) == pytest.approx(-1.0, abs=1e-12)


def test_pearson_matches_oracle():
    rng = np.random.default_rng(44)
    for _ in range(10):
        x = rng.standard_normal(15)
        y = rng.standard_normal(15)
        assert pearson(x, y) == pytest.approx(oracle_pearson(x, y), abs=1e-12)


def test_pearson_errors():
    with pytest.raises(ValidationError):
        pearson([1.0], [2.0])
    with pytest.raises(ValidationError):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


# ---------------------------------------------------------------- scores IO


def test_scores_file_roundtrip(tmp_path):
    rng = np.random.default_rng(45)
    scores = allocate_budgets(
        rng.uniform(-1, 1, 5), rng.uniform(0.2, 1.0, 5), 0.1, rng.integers(5, 30, 5), 20
    )
    prefix = str(tmp_path / "s")
    save_scores(scores, prefix)
    loaded = load_scores(prefix)
    assert np.array_equal(loaded.budget, scores.budget)
    assert np.allclose(loaded.transfer, scores.transfer, atol=0)
    assert np.allclose(loaded.density, scores.density, atol=0)
    assert np.allclose(loaded.probability, scores.probability, atol=0)
    assert loaded.tau == scores.tau


def test_scores_file_rejects_tampering(tmp_path):
    import json

    rng = np.random.default_rng(46)
    scores = allocate_budgets(
        rng.uniform(-1, 1, 3), rng.uniform(0.2, 1.0, 3), 0.1, [10, 10, 10], 6
    )
    prefix = str(tmp_path / "s")
    save_scores(scores, prefix)
    path = prefix + ".scores.json"
    obj = json.load(open(path))
    obj["P"] = [0.9, 0.5, 0.1]  # no longer sums to 1
    json.dump(obj, open(path, "w"))
    with pytest.raises(FormatError):
        load_scores(prefix)
