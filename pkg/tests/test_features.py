"""Token-activation aggregation against hand-rolled oracles.

The oracle below recomputes the pooled features with plain Python
loops (tanh per element, sum per dimension, explicit norm), kept
deliberately independent of the library implementation.
"""

from __future__ import annotations

import math
import os

import numpy as np
import pytest

from coincide import (
    ValidationError,
    aggregate_layer,
    compose_multimodal,
    features_from_tokens,
    load_token_fixture,
)


def oracle_pool(tokens) -> list[float]:
    rows = [list(map(float, row)) for row in tokens]
    n, dim = len(rows), len(rows[0])
    pooled = []
    for j in range(dim):
        total = 0.0
        for i in range(n):
            total += math.tanh(rows[i][j])
        pooled.append(total / n)
    norm = math.sqrt(sum(v * v for v in pooled))
    return [v / norm for v in pooled]


def oracle_compose(pairs) -> np.ndarray:
    flat: list[float] = []
    for visual, text in pairs:
        flat.extend(visual)
        flat.extend(text)
    scale = math.sqrt(2 * len(pairs))
    return np.array([v / scale for v in flat])


def test_single_token_half_collapses_to_unit_axis():
    # tanh(0.5) = 0.46211715726000974; normalizing a single nonzero
    # component gives exactly (1, 0).
    pair = aggregate_layer([[0.5, 0.0]], [[0.0, 0.3]])
    assert pair.u_visual.tolist() == [1.0, 0.0]
    assert math.isclose(math.tanh(0.5), 0.46211715726000974, rel_tol=0, abs_tol=0)


def test_matches_oracle_on_random_inputs():
    rng = np.random.default_rng(11)
    for _ in range(25):
        nv, nt = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        dim = int(rng.integers(1, 7))
        visual = rng.standard_normal((nv, dim)) * 2
        text = rng.standard_normal((nt, dim)) * 2
        pair = aggregate_layer(visual, text)
        assert np.allclose(pair.u_visual, oracle_pool(visual), rtol=0, atol=1e-12)
        assert np.allclose(pair.u_text, oracle_pool(text), rtol=0, atol=1e-12)


def test_outputs_are_unit_norm():
    rng = np.random.default_rng(3)
    for _ in range(10):
        pair = aggregate_layer(rng.standard_normal((5, 8)), rng.standard_normal((3, 8)))
        assert abs(np.linalg.norm(pair.u_visual) - 1.0) < 1e-12
        assert abs(np.linalg.norm(pair.u_text) - 1.0) < 1e-12


def test_duplicating_every_token_changes_nothing_bitwise():
    rng = np.random.default_rng(5)
    visual = rng.standard_normal((4, 6))
    text = rng.standard_normal((7, 6))
    base = aggregate_layer(visual, text)
    doubled = aggregate_layer(np.vstack([visual, visual]), np.vstack([text, text]))
    assert np.array_equal(base.u_visual, doubled.u_visual)
    assert np.array_equal(base.u_text, doubled.u_text)


def test_token_order_changes_nothing_bitwise():
    rng = np.random.default_rng(6)
    visual = rng.standard_normal((9, 5))
    text = rng.standard_normal((6, 5))
    base = aggregate_layer(visual, text)
    perm_v = rng.permutation(9)
    perm_t = rng.permutation(6)
    shuffled = aggregate_layer(visual[perm_v], text[perm_t])
    assert np.array_equal(base.u_visual, shuffled.u_visual)
    assert np.array_equal(base.u_text, shuffled.u_text)


def test_saturated_activations_pool_to_sign():
    pair = aggregate_layer([[20.0, -20.0]], [[25.0, 25.0]])
    # tanh at +/-20 is within 1e-8 of +/-1, so the pooled direction is
    # the (normalized) sign pattern.
    assert np.allclose(pair.u_visual, [1 / math.sqrt(2), -1 / math.sqrt(2)], atol=1e-8)


def test_zero_tokens_are_degenerate():
    with pytest.raises(ValidationError):
        aggregate_layer([[0.0, 0.0]], [[1.0, 0.0]])


def test_cancelling_tokens_are_degenerate():
    tokens = np.array([[0.7, -0.2], [-0.7, 0.2]])
    with pytest.raises(ValidationError):
        aggregate_layer([[1.0, 0.0]], tokens)


def test_mismatched_hidden_dims_rejected():
    with pytest.raises(ValidationError):
        aggregate_layer([[1.0, 0.0]], [[1.0, 0.0, 0.0]])


def test_compose_single_layer_known_value():
    from coincide import LayerFeaturePair

    pair = LayerFeaturePair(u_visual=np.array([1.0, 0.0]), u_text=np.array([0.0, 1.0]))
    out = compose_multimodal([pair])
    expected = np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2.0)
    assert np.array_equal(out, expected)
    assert abs(np.linalg.norm(out) - 1.0) < 1e-12


def test_compose_matches_oracle_and_is_unit():
    rng = np.random.default_rng(9)
    for n_layers in (1, 2, 5):
        raw_pairs = []
        for _ in range(n_layers):
            visual = rng.standard_normal((3, 4))
            text = rng.standard_normal((4, 4))
            raw_pairs.append((visual, text))
        pairs = [aggregate_layer(v, t) for v, t in raw_pairs]
        out = compose_multimodal(pairs)
        expected = oracle_compose([(p.u_visual, p.u_text) for p in pairs])
        assert np.allclose(out, expected, rtol=0, atol=1e-15)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-6
        assert out.shape == (2 * n_layers * 4,)


def test_compose_rejects_empty_and_mismatched():
    from coincide import LayerFeaturePair

    with pytest.raises(ValidationError):
        compose_multimodal([])
    a = LayerFeaturePair(u_visual=np.array([1.0, 0.0]), u_text=np.array([0.0, 1.0]))
    b = LayerFeaturePair(u_visual=np.array([1.0, 0.0, 0.0]), u_text=np.array([0.0, 1.0, 0.0]))
    with pytest.raises(ValidationError):
        compose_multimodal([a, b])


def test_fixture_file_loads_and_aggregates(fixtures_dir):
    samples = load_token_fixture(os.path.join(fixtures_dir, "token_activations.json"))
    assert len(samples) == 4
    for layers in samples:
        feature = features_from_tokens(layers)
        assert abs(np.linalg.norm(feature) - 1.0) < 1e-6
        assert feature.shape == (2 * len(layers) * 6,)
