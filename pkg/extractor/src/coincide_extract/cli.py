"""coincide-extract: dataset + model -> feature-store files.

    coincide-extract --dataset data.json --out features/train \
        [--model bczhou/TinyLLaVA-2.0B] [--layers 4,8,12,16,20] \
        [--backend stub|stub-const|hf] [--hidden-dim 32] \
        [--batch-size 8] [--device cpu]

Writes ``<out>.feat`` and ``<out>.manifest.json`` plus a JSON run
report (config echo, wall time, sha256 of each output). Failures print
one machine-readable JSON object to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time

from .dataset import load_dataset
from .errors import ExtractError
from .extract import BACKENDS, ExtractConfig, extract
from .stub import DEFAULT_LAYER_INDICES, DEFAULT_MODEL_ID
from .writer import feature_path, manifest_path

REPORT_VERSION = 1


def _parse_layers(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise SystemExit(f"--layers must be a comma list of integers, got {text!r}")


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coincide-extract",
        description="Pool reference-model activations into feature-store files.",
    )
    parser.add_argument("--dataset", required=True, help="conversation dataset JSON")
    parser.add_argument("--out", required=True, help="output path prefix")
    parser.add_argument("--model", default=DEFAULT_MODEL_ID, help="model identifier")
    parser.add_argument(
        "--layers",
        default=",".join(str(v) for v in DEFAULT_LAYER_INDICES),
        help="comma list of decoder layers to tap",
    )
    parser.add_argument("--backend", choices=BACKENDS, default="stub")
    parser.add_argument(
        "--hidden-dim",
        dest="hidden_dim",
        type=int,
        default=32,
        help="stub hidden size (the real model dictates its own)",
    )
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=8)
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    cfg = ExtractConfig(
        model_id=ns.model,
        layer_indices=_parse_layers(ns.layers),
        backend=ns.backend,
        hidden_dim=ns.hidden_dim,
        batch_size=ns.batch_size,
        device=ns.device,
    )
    started = time.perf_counter()
    try:
        samples = load_dataset(ns.dataset)
        rows = extract(samples, cfg, ns.out)
    except (ExtractError, OSError) as exc:
        payload = {
            "error": {
                "type": type(exc).__name__,
                "message": str(exc),
                "hint": getattr(exc, "hint", None),
            }
        }
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1
    report = {
        "version": REPORT_VERSION,
        "stage": "extract",
        "config": {
            "model_id": cfg.model_id,
            "layer_indices": list(cfg.layer_indices),
            "backend": cfg.backend,
            "hidden_dim": cfg.hidden_dim,
            "batch_size": cfg.batch_size,
            "device": cfg.device,
            "n_samples": int(rows.shape[0]),
            "feature_dim": int(rows.shape[1]),
        },
        "wall_time_s": time.perf_counter() - started,
        "inputs": {ns.dataset: _sha256(ns.dataset)},
        "outputs": {
            path: _sha256(path) for path in (feature_path(ns.out), manifest_path(ns.out))
        },
    }
    with open(f"{ns.out}.extract.report.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
