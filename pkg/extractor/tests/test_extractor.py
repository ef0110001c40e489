"""Extractor package: pooling, stub model, dataset reader, writer, CLI."""

from __future__ import annotations

import json
import math
import struct

import numpy as np
import pytest

from coincide_extract import (
    ActivationError,
    ConfigError,
    DatasetError,
    ExtractConfig,
    Sample,
    SegmentationError,
    StubModel,
    compose_sample,
    extract,
    load_dataset,
    make_backend,
    pool_modality,
    task_labels,
    write_store,
)
from coincide_extract.cli import main as cli_main


def make_samples(n=6, with_task=False):
    return [
        Sample(
            sample_id=f"s{i:03d}",
            image=f"images/{i}.jpg",
            text=f"question about item {i}\nanswer with detail {i} and more words",
            task=("vqa" if i % 2 else "caption") if with_task else None,
        )
        for i in range(n)
    ]


def write_dataset(tmp_path, n=6, with_task=False):
    entries = []
    for i in range(n):
        entry = {
            "id": f"s{i:03d}",
            "image": f"images/{i}.jpg",
            "conversations": [
                {"from": "human", "value": f"question about item {i}"},
                {"from": "gpt", "value": f"answer with detail {i} and more words"},
            ],
        }
        if with_task:
            entry["task"] = "vqa" if i % 2 else "caption"
        entries.append(entry)
    path = tmp_path / "data.json"
    path.write_text(json.dumps(entries))
    return path


# ------------------------------------------------------------- pooling


def oracle_pool(tokens):
    rows = [[math.tanh(float(v)) for v in row] for row in tokens]
    dim = len(rows[0])
    mean = [sum(r[j] for r in rows) / len(rows) for j in range(dim)]
    norm = math.sqrt(sum(v * v for v in mean))
    return [v / norm for v in mean]


def test_pool_modality_matches_reference_loop():
    rng = np.random.default_rng(201)
    for _ in range(20):
        tokens = rng.standard_normal((int(rng.integers(1, 9)), int(rng.integers(1, 12))))
        got = pool_modality(tokens)
        want = np.asarray(oracle_pool(tokens))
        assert got.dtype == np.float32
        assert np.max(np.abs(got.astype(np.float64) - want)) < 1e-6
        assert abs(float(np.linalg.norm(got.astype(np.float64))) - 1.0) < 1e-6


def test_pool_modality_rejects_bad_inputs():
    with pytest.raises(ActivationError):
        pool_modality(np.zeros((0, 4)))
    with pytest.raises(ActivationError):
        pool_modality(np.array([[1.0, np.nan]]))
    with pytest.raises(ActivationError):
        pool_modality(np.zeros((3, 4)))  # tanh(0) pools to the zero vector


def test_compose_sample_layout_and_scale():
    rng = np.random.default_rng(202)
    layers = [(rng.standard_normal((3, 5)), rng.standard_normal((4, 5))) for _ in range(3)]
    row = compose_sample(layers)
    assert row.shape == (2 * 3 * 5,)
    scale = 1.0 / math.sqrt(6)
    for m, (visual, text) in enumerate(layers):
        lo = m * 10
        v = row[lo : lo + 5].astype(np.float64)
        t = row[lo + 5 : lo + 10].astype(np.float64)
        assert np.max(np.abs(v - np.asarray(oracle_pool(visual)) * scale)) < 1e-6
        assert np.max(np.abs(t - np.asarray(oracle_pool(text)) * scale)) < 1e-6
    assert abs(float(np.linalg.norm(row.astype(np.float64))) - 1.0) < 1e-6


def test_compose_sample_rejects_mixed_hidden_sizes():
    rng = np.random.default_rng(203)
    with pytest.raises(ActivationError):
        compose_sample(
            [
                (rng.standard_normal((2, 4)), rng.standard_normal((2, 4))),
                (rng.standard_normal((2, 6)), rng.standard_normal((2, 6))),
            ]
        )
    with pytest.raises(ActivationError):
        compose_sample([])


# ------------------------------------------------------------- stub model


def test_stub_is_deterministic_and_keyed():
    sample = make_samples(1)[0]
    model = StubModel(hidden_dim=8)
    twin = StubModel(hidden_dim=8)
    a = model.activations(sample, 4)
    assert np.array_equal(a, twin.activations(sample, 4))
    assert not np.array_equal(a, model.activations(sample, 8))
    other = Sample(sample_id="other", image=sample.image, text=sample.text)
    assert not np.array_equal(a, model.activations(other, 4))
    renamed = StubModel(model_id="another/model", hidden_dim=8)
    assert not np.array_equal(a, renamed.activations(sample, 4))


def test_stub_layout_counts_words():
    model = StubModel(hidden_dim=4)
    sample = Sample(sample_id="x", image="x.jpg", text="three word text")
    layout = model.layout(sample)
    assert layout.n_visual == 16
    assert layout.n_text == 3
    assert layout.visual_start == 0
    acts = model.activations(sample, 0)
    assert acts.shape == (19, 4)
    assert acts.dtype == np.float32


def test_stub_constant_mode_and_layer_bounds():
    model = StubModel(hidden_dim=4, constant=True)
    sample = make_samples(1)[0]
    acts = model.activations(sample, 4)
    assert np.all(acts == 1.0)
    with pytest.raises(ConfigError):
        model.activations(sample, 24)
    with pytest.raises(ConfigError):
        model.activations(sample, -1)
    with pytest.raises(ConfigError):
        StubModel(hidden_dim=0)


# ------------------------------------------------------------- dataset


def test_dataset_roundtrip(tmp_path):
    path = write_dataset(tmp_path, n=4, with_task=True)
    samples = load_dataset(str(path))
    assert [s.sample_id for s in samples] == ["s000", "s001", "s002", "s003"]
    assert samples[0].text.startswith("question about item 0\n")
    assert task_labels(samples) == ["caption", "vqa", "caption", "vqa"]
    bare = load_dataset(str(write_dataset(tmp_path, n=2)))
    assert task_labels(bare) == []


@pytest.mark.parametrize(
    "mutate",
    [
        lambda e: e[0].pop("id"),
        lambda e: e[0].update(id=e[1]["id"]),
        lambda e: e[0].pop("image"),
        lambda e: e[0].update(conversations=[]),
        lambda e: e[0]["conversations"].append({"from": "human"}),
        lambda e: e[0].update(task="vqa"),  # only one sample labeled
        lambda e: e[0].update(task=7),
    ],
)
def test_dataset_rejects_malformed_entries(tmp_path, mutate):
    entries = json.loads(write_dataset(tmp_path, n=3).read_text())
    mutate(entries)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(entries))
    with pytest.raises(DatasetError):
        load_dataset(str(bad))


def test_dataset_rejects_non_list_and_garbage(tmp_path):
    p = tmp_path / "obj.json"
    p.write_text("{}")
    with pytest.raises(DatasetError):
        load_dataset(str(p))
    p.write_text("not json")
    with pytest.raises(DatasetError):
        load_dataset(str(p))


# ------------------------------------------------------------- writer


def test_writer_emits_the_documented_header(tmp_path):
    rows = np.eye(4, dtype=np.float32)  # unit rows, n=4, F=4
    prefix = str(tmp_path / "w")
    write_store(rows, [f"i{i}" for i in range(4)], [], [7], 2, "m", prefix)
    raw = open(prefix + ".feat", "rb").read()
    assert raw[:8] == b"COINCIDE"
    version, n, dim, dtype = struct.unpack("<IQIB", raw[8:25])
    assert (version, n, dim, dtype) == (1, 4, 4, 0)
    assert raw[25:] == rows.tobytes(order="C")
    assert len(raw) == 25 + 4 * 4 * 4
    manifest = json.loads(open(prefix + ".manifest.json").read())
    assert manifest["num_layers_tapped"] == 1
    assert manifest["hidden_dim"] == 2
    assert not list(tmp_path.glob("*.tmp"))


def test_writer_validates_contract(tmp_path):
    prefix = str(tmp_path / "w")
    ids = ["a", "b"]
    good = np.eye(2, dtype=np.float32)
    with pytest.raises(ActivationError):
        write_store(good * 2, ids, [], [0], 1, "m", prefix)  # norm 2
    with pytest.raises(ConfigError):
        write_store(good, ids, [], [0, 1], 1, "m", prefix)  # dim mismatch
    with pytest.raises(ConfigError):
        write_store(good, ids[:1], [], [0], 1, "m", prefix)  # id count
    with pytest.raises(ConfigError):
        write_store(good, ids, ["x"], [0], 1, "m", prefix)  # label count
    with pytest.raises(ConfigError):
        write_store(np.eye(2, 4, dtype=np.float32), ids, [], [1, 0], 1, "m", prefix)
    assert not list(tmp_path.iterdir())  # nothing half-written


# ------------------------------------------------------------- engine


def test_extract_batch_size_never_changes_output(tmp_path):
    samples = make_samples(7)
    for batch_size in (1, 3, 16):
        cfg = ExtractConfig(layer_indices=(4, 8), hidden_dim=8, batch_size=batch_size)
        extract(samples, cfg, str(tmp_path / f"b{batch_size}"))
    base = (tmp_path / "b1.feat").read_bytes()
    assert (tmp_path / "b3.feat").read_bytes() == base
    assert (tmp_path / "b16.feat").read_bytes() == base


def test_extract_is_deterministic_across_runs(tmp_path):
    samples = make_samples(5, with_task=True)
    cfg = ExtractConfig(layer_indices=(4, 8, 12), hidden_dim=8)
    extract(samples, cfg, str(tmp_path / "a"))
    extract(samples, cfg, str(tmp_path / "b"))
    assert (tmp_path / "a.feat").read_bytes() == (tmp_path / "b.feat").read_bytes()
    assert (tmp_path / "a.manifest.json").read_bytes() == (
        tmp_path / "b.manifest.json"
    ).read_bytes()


def test_extract_manifest_reflects_dataset(tmp_path):
    samples = make_samples(4, with_task=True)
    cfg = ExtractConfig(layer_indices=(4, 8), hidden_dim=8)
    rows = extract(samples, cfg, str(tmp_path / "m"))
    assert rows.shape == (4, 2 * 2 * 8)
    manifest = json.loads((tmp_path / "m.manifest.json").read_text())
    assert manifest["sample_ids"] == [s.sample_id for s in samples]
    assert manifest["task_labels"] == ["caption", "vqa", "caption", "vqa"]
    assert manifest["layer_indices"] == [4, 8]
    assert manifest["reference_model"] == cfg.model_id


def test_extract_config_validation(tmp_path):
    samples = make_samples(2)
    with pytest.raises(ConfigError):
        extract(samples, ExtractConfig(layer_indices=()), str(tmp_path / "x"))
    with pytest.raises(ConfigError):
        extract(samples, ExtractConfig(layer_indices=(8, 4)), str(tmp_path / "x"))
    with pytest.raises(ConfigError):
        extract(samples, ExtractConfig(layer_indices=(4, 99)), str(tmp_path / "x"))
    with pytest.raises(ConfigError):
        extract(samples, ExtractConfig(batch_size=0), str(tmp_path / "x"))
    with pytest.raises(ConfigError):
        extract(samples, ExtractConfig(backend="magic"), str(tmp_path / "x"))
    with pytest.raises(ConfigError):
        extract([], ExtractConfig(), str(tmp_path / "x"))


def test_extract_rejects_textless_sample(tmp_path):
    sample = Sample(sample_id="mute", image="x.jpg", text="   ")
    with pytest.raises(SegmentationError):
        extract([sample], ExtractConfig(layer_indices=(4,)), str(tmp_path / "x"))


def test_hf_backend_requires_optional_deps():
    try:
        import torch  # noqa: F401

        pytest.skip("torch installed; the lazy-import failure path is untestable")
    except ImportError:
        pass
    with pytest.raises(ConfigError):
        make_backend(ExtractConfig(backend="hf"))


# ------------------------------------------------------------- CLI


def test_cli_writes_store_and_report(tmp_path, capsys):
    data = write_dataset(tmp_path, n=5, with_task=True)
    out = tmp_path / "run"
    code = cli_main(
        ["--dataset", str(data), "--out", str(out), "--layers", "4,8", "--hidden-dim", "8"]
    )
    assert code == 0
    assert (tmp_path / "run.feat").exists()
    assert (tmp_path / "run.manifest.json").exists()
    report = json.loads((tmp_path / "run.extract.report.json").read_text())
    assert report["config"]["n_samples"] == 5
    assert report["config"]["feature_dim"] == 2 * 2 * 8
    import hashlib

    for path, digest in report["outputs"].items():
        assert hashlib.sha256(open(path, "rb").read()).hexdigest() == digest


def test_cli_error_envelope(tmp_path, capsys):
    code = cli_main(["--dataset", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["type"] == "FileNotFoundError"


def test_cli_rejects_bad_flags(tmp_path):
    data = write_dataset(tmp_path)
    with pytest.raises(SystemExit):
        cli_main(["--dataset", str(data), "--out", str(tmp_path / "x"), "--backend", "turbo"])
    with pytest.raises(SystemExit):
        cli_main(["--dataset", str(data), "--out", str(tmp_path / "x"), "--layers", "4,eight"])


def test_real_model_smoke_is_opt_in():
    import os

    if not os.environ.get("COINCIDE_EXTRACT_REAL_MODEL"):
        pytest.skip("set COINCIDE_EXTRACT_REAL_MODEL=1 to smoke-test the hf backend")
    pytest.importorskip("torch")
    pytest.importorskip("transformers")
    backend = make_backend(ExtractConfig(backend="hf"))
    assert backend.depth > 0
