"""Command-line pipeline: cluster, score, select, run, synth, report.

Every stage reads/writes the documented artifact files and drops a JSON
stage report next to its output (config echo, wall time, sha256 of every
input and output file). ``run`` chains cluster -> score -> select,
handing every stage the same top-level seed; each randomness consumer
derives its own named stream from it, so run's artifacts are byte-
identical to running the stages by hand with the same seed.

Failures print one machine-readable JSON object to stderr::

    {"error": {"stage": ..., "type": ..., "message": ..., "hint": ...}}

and exit nonzero.

Flags beat the optional ``--config`` JSON file, which beats built-in
defaults.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass

from . import cluster as cluster_mod
from . import sampling, scoring, store, synth
from .errors import CoincideError, ConfigError
from .selector import compute_cluster_scores, resolve_n_core, run_selection

REPORT_VERSION = 1


@dataclass
class PipelineConfig:
    """Resolved knobs for the cluster/score/select stages."""

    k: int | None = None
    tau: float = scoring.DEFAULT_TAU
    sampling_ratio: float | None = None
    n_core: int | None = None
    strategy: str = sampling.STRATEGY_MMD_GREEDY
    seed: int = 0
    density_cap: int | None = scoring.DEFAULT_DENSITY_CAP
    include_self_in_targets: bool = False
    mmd_include_self_pairs: bool = True
    kernel_bandwidth: float = 1.0
    max_iterations: int = 100
    tolerance: float | None = None
    init: str = cluster_mod.INIT_KMEANS_PLUS_PLUS
    threads: int | None = None
    skip_norm_check: bool = False

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "tau": self.tau,
            "sampling_ratio": self.sampling_ratio,
            "n_core": self.n_core,
            "strategy": self.strategy,
            "seed": self.seed,
            "density_cap": self.density_cap,
            "include_self_in_targets": self.include_self_in_targets,
            "mmd_include_self_pairs": self.mmd_include_self_pairs,
            "kernel_bandwidth": self.kernel_bandwidth,
            "max_iterations": self.max_iterations,
            "tolerance": self.tolerance,
            "init": self.init,
            "threads": self.threads,
            "skip_norm_check": self.skip_norm_check,
        }


_CONFIG_KEYS = set(PipelineConfig().to_json_dict())


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: config file is not valid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config file must hold a JSON object")
    unknown = sorted(set(obj) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(
            f"{path}: unknown config keys {unknown}",
            hint=f"known keys: {sorted(_CONFIG_KEYS)}",
        )
    return obj


def _resolve_config(ns: argparse.Namespace) -> PipelineConfig:
    """Overlay CLI flags (when given) onto the config file onto defaults."""
    file_cfg = _load_config_file(getattr(ns, "config", None))
    cfg = PipelineConfig()
    for key in _CONFIG_KEYS:
        flag = getattr(ns, key, None)
        if flag is not None:
            setattr(cfg, key, flag)
        elif key in file_cfg:
            setattr(cfg, key, file_cfg[key])
    if cfg.density_cap is not None and cfg.density_cap == 0:
        cfg.density_cap = None  # 0 disables the cap: exact densities
    return cfg


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_report(
    out_prefix: str,
    stage: str,
    cfg: PipelineConfig,
    wall_time_s: float,
    inputs: list[str],
    outputs: list[str],
    extra: dict | None = None,
) -> dict:
    report = {
        "version": REPORT_VERSION,
        "stage": stage,
        "config": cfg.to_json_dict(),
        "wall_time_s": wall_time_s,
        "inputs": {path: _sha256(path) for path in inputs},
        "outputs": {path: _sha256(path) for path in outputs},
    }
    if extra:
        report.update(extra)
    path = f"{out_prefix}.{stage}.report.json"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def stage_cluster(cfg: PipelineConfig, features_prefix: str, out_prefix: str) -> dict:
    if cfg.k is None:
        raise ConfigError("k is required for clustering", hint="pass --k or set it in --config")
    started = time.perf_counter()
    matrix, _manifest = store.read_features(features_prefix, skip_norm_check=cfg.skip_norm_check)
    estimator = cluster_mod.SphericalKMeans(
        k=cfg.k,
        max_iterations=cfg.max_iterations,
        tolerance=cfg.tolerance,
        seed=cfg.seed,
        init=cfg.init,
        threads=cfg.threads,
    ).fit(matrix.data)
    model = estimator.to_model()
    cluster_mod.save_cluster_model(model, out_prefix)
    return _write_report(
        out_prefix,
        "cluster",
        cfg,
        time.perf_counter() - started,
        inputs=[store.feature_path(features_prefix), store.manifest_path(features_prefix)],
        outputs=[cluster_mod.clusters_path(out_prefix)],
        extra={
            "objective": model.objective,
            "iterations_run": model.iterations_run,
        },
    )


def stage_score(
    cfg: PipelineConfig, features_prefix: str, clusters_prefix: str, out_prefix: str
) -> dict:
    started = time.perf_counter()
    matrix, _manifest = store.read_features(features_prefix, skip_norm_check=cfg.skip_norm_check)
    model = cluster_mod.load_cluster_model(clusters_prefix)
    if model.n_samples != matrix.n_samples:
        raise ConfigError(
            f"clusters cover {model.n_samples} samples but the features have "
            f"{matrix.n_samples}"
        )
    n_core = resolve_n_core(matrix.n_samples, cfg.sampling_ratio, cfg.n_core)
    scores = compute_cluster_scores(
        matrix.data,
        model,
        n_core=n_core,
        tau=cfg.tau,
        density_cap=cfg.density_cap,
        seed=cfg.seed,
        include_self_in_targets=cfg.include_self_in_targets,
        kernel_bandwidth=cfg.kernel_bandwidth,
        threads=cfg.threads,
    )
    scoring.save_scores(scores, out_prefix)
    return _write_report(
        out_prefix,
        "score",
        cfg,
        time.perf_counter() - started,
        inputs=[
            store.feature_path(features_prefix),
            store.manifest_path(features_prefix),
            cluster_mod.clusters_path(clusters_prefix),
        ],
        outputs=[scoring.scores_path(out_prefix)],
        extra={"n_core": n_core},
    )


def stage_select(
    cfg: PipelineConfig,
    features_prefix: str,
    clusters_prefix: str,
    scores_prefix: str,
    out_prefix: str,
) -> dict:
    started = time.perf_counter()
    matrix, manifest = store.read_features(features_prefix, skip_norm_check=cfg.skip_norm_check)
    model = cluster_mod.load_cluster_model(clusters_prefix)
    scores = scoring.load_scores(scores_prefix)
    if model.n_samples != matrix.n_samples:
        raise ConfigError("clusters and features disagree on the sample count")
    if scores.k != model.k:
        raise ConfigError(
            f"scores file lists {scores.k} clusters but the model has {model.k}"
        )
    selection = run_selection(
        matrix.data,
        model,
        scores,
        strategy=cfg.strategy,
        seed=cfg.seed,
        mmd_include_self_pairs=cfg.mmd_include_self_pairs,
        kernel_bandwidth=cfg.kernel_bandwidth,
        threads=cfg.threads,
    )
    sampling.save_coreset(selection, manifest, scores, out_prefix)
    return _write_report(
        out_prefix,
        "select",
        cfg,
        time.perf_counter() - started,
        inputs=[
            store.feature_path(features_prefix),
            store.manifest_path(features_prefix),
            cluster_mod.clusters_path(clusters_prefix),
            scoring.scores_path(scores_prefix),
        ],
        outputs=[sampling.coreset_path(out_prefix)],
        extra={"n_selected": selection.n_selected},
    )


def cmd_cluster(ns: argparse.Namespace) -> int:
    cfg = _resolve_config(ns)
    stage_cluster(cfg, ns.features, ns.out)
    return 0


def cmd_score(ns: argparse.Namespace) -> int:
    cfg = _resolve_config(ns)
    stage_score(cfg, ns.features, ns.clusters, ns.out)
    return 0


def cmd_select(ns: argparse.Namespace) -> int:
    cfg = _resolve_config(ns)
    stage_select(cfg, ns.features, ns.clusters, ns.scores, ns.out)
    return 0


def cmd_run(ns: argparse.Namespace) -> int:
    cfg = _resolve_config(ns)
    started = time.perf_counter()
    reports = [
        stage_cluster(cfg, ns.features, ns.out),
        stage_score(cfg, ns.features, ns.out, ns.out),
        stage_select(cfg, ns.features, ns.out, ns.out, ns.out),
    ]
    report = {
        "version": REPORT_VERSION,
        "stage": "run",
        "config": cfg.to_json_dict(),
        "wall_time_s": time.perf_counter() - started,
        "stages": [
            {
                "stage": r["stage"],
                "wall_time_s": r["wall_time_s"],
                "inputs": r["inputs"],
                "outputs": r["outputs"],
            }
            for r in reports
        ],
    }
    with open(f"{ns.out}.run.report.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def _parse_points(text: str):
    if ":" in text:
        low, _, high = text.partition(":")
        return (int(low), int(high))
    if "," in text:
        return [int(part) for part in text.split(",") if part]
    return int(text)


def cmd_synth(ns: argparse.Namespace) -> int:
    started = time.perf_counter()
    if ns.spec is not None:
        with open(ns.spec, "r", encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{ns.spec}: not valid JSON ({exc})") from None
        points = obj.get("points_per_cluster", 100)
        if "points_range" in obj:
            low, high = obj["points_range"]
            points = (int(low), int(high))
        spec = synth.SynthSpec(
            n_clusters_true=int(obj["n_clusters_true"]),
            points_per_cluster=points,
            dim=int(obj["dim"]),
            angular_spread_deg=float(obj.get("angular_spread_deg", 5.0)),
            inter_cluster_sim=float(obj.get("inter_cluster_sim", 0.0)),
            task_labels=obj.get("task_labels"),
            seed=int(obj.get("seed", 0)),
        )
    else:
        required = {"clusters": ns.clusters, "points": ns.points, "dim": ns.dim}
        missing = [flag for flag, value in required.items() if value is None]
        if missing:
            raise ConfigError(f"synth needs --{', --'.join(missing)} (or --spec)")
        spec = synth.SynthSpec(
            n_clusters_true=ns.clusters,
            points_per_cluster=_parse_points(ns.points),
            dim=ns.dim,
            angular_spread_deg=ns.spread_deg if ns.spread_deg is not None else 5.0,
            inter_cluster_sim=ns.inter_sim if ns.inter_sim is not None else 0.0,
            seed=ns.seed if ns.seed is not None else 0,
        )
    matrix, manifest, truth = synth.generate(spec)
    store.write_features(matrix, manifest, ns.out)
    synth.save_truth(truth, spec.effective_task_labels(), ns.out)
    report = {
        "version": REPORT_VERSION,
        "stage": "synth",
        "config": {
            "n_clusters_true": spec.n_clusters_true,
            "dim": spec.dim,
            "angular_spread_deg": spec.angular_spread_deg,
            "inter_cluster_sim": spec.inter_cluster_sim,
            "seed": spec.seed,
            "n_samples": matrix.n_samples,
        },
        "wall_time_s": time.perf_counter() - started,
        "inputs": {},
        "outputs": {
            path: _sha256(path)
            for path in (
                store.feature_path(ns.out),
                store.manifest_path(ns.out),
                synth.truth_path(ns.out),
            )
        },
    }
    with open(f"{ns.out}.synth.report.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_report(ns: argparse.Namespace) -> int:
    started = time.perf_counter()
    selection, _blocks = sampling.load_coreset(ns.coreset)
    manifest = store.read_manifest(ns.features)
    truth, cluster_labels = synth.load_truth(ns.truth)
    result = synth.evaluate_selection(
        selection.merged, truth, manifest, n_clusters_true=len(cluster_labels)
    )
    obj = result.to_json_dict()
    obj["version"] = REPORT_VERSION
    obj["wall_time_s"] = time.perf_counter() - started
    obj["inputs"] = {
        path: _sha256(path)
        for path in (ns.coreset, store.manifest_path(ns.features), synth.truth_path(ns.truth))
    }
    path = f"{ns.out}.selection-report.json"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    print(
        f"coverage={result.coverage:.4f} entropy_bits={result.entropy_bits:.4f} "
        f"gini={result.gini:.4f} n_selected={result.n_selected}"
    )
    return 0


def _add_common(parser: argparse.ArgumentParser, *, ratio: bool, kmeans: bool) -> None:
    parser.add_argument("--seed", type=int, default=None, help="top-level seed (default 0)")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads; COINCIDE_THREADS, then the CPU count, when omitted",
    )
    parser.add_argument("--config", default=None, help="JSON config file; flags override it")
    parser.add_argument(
        "--skip-norm-check",
        action="store_true",
        default=None,
        help="skip the unit-norm check when reading features",
    )
    if ratio:
        group = parser.add_mutually_exclusive_group()
        group.add_argument(
            "--ratio",
            dest="sampling_ratio",
            type=float,
            default=None,
            help="coreset size as a fraction of the dataset, in (0, 1]",
        )
        group.add_argument("--n-core", dest="n_core", type=int, default=None)
    if kmeans:
        parser.add_argument("--k", type=int, default=None, help="number of clusters")
        parser.add_argument("--max-iterations", dest="max_iterations", type=int, default=None)
        parser.add_argument(
            "--tolerance",
            type=float,
            default=None,
            help="early-stop objective improvement (default 1e-6 per sample)",
        )
        parser.add_argument(
            "--init",
            choices=(cluster_mod.INIT_KMEANS_PLUS_PLUS, cluster_mod.INIT_RANDOM_ROWS),
            default=None,
        )


def _add_bandwidth_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--kernel-bandwidth",
        dest="kernel_bandwidth",
        type=float,
        default=None,
        help="Gaussian kernel bandwidth (default 1)",
    )


def _add_scoring_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tau", type=float, default=None, help="softmax temperature")
    parser.add_argument(
        "--density-cap",
        dest="density_cap",
        type=int,
        default=None,
        help="subsample cap for density estimation; 0 disables the cap",
    )
    parser.add_argument(
        "--include-self-targets",
        dest="include_self_in_targets",
        action="store_true",
        default=None,
        help="count a cluster in its own transfer-proxy target set",
    )


def _add_select_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--strategy", choices=sampling.STRATEGIES, default=None)
    parser.add_argument(
        "--mmd-exclude-self",
        dest="mmd_include_self_pairs",
        action="store_false",
        default=None,
        help="drop self-pairs from the MMD subset averages",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coincide",
        description="Cluster-budgeted coreset selection over unit-norm feature files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="fit spherical k-means and write <out>.clusters")
    p.add_argument("--features", required=True, help="input path prefix (.feat/.manifest.json)")
    p.add_argument("--out", required=True, help="output path prefix")
    _add_common(p, ratio=False, kmeans=True)
    p.set_defaults(func=cmd_cluster, stage="cluster")

    p = sub.add_parser("score", help="score clusters and write <out>.scores.json")
    p.add_argument("--features", required=True)
    p.add_argument("--clusters", required=True, help="prefix of the .clusters file")
    p.add_argument("--out", required=True)
    _add_common(p, ratio=True, kmeans=False)
    _add_scoring_flags(p)
    _add_bandwidth_flag(p)
    p.set_defaults(func=cmd_score, stage="score")

    p = sub.add_parser("select", help="pick the coreset and write <out>.coreset.json")
    p.add_argument("--features", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--scores", required=True, help="prefix of the .scores.json file")
    p.add_argument("--out", required=True)
    _add_common(p, ratio=False, kmeans=False)
    _add_select_flags(p)
    _add_bandwidth_flag(p)
    p.set_defaults(func=cmd_select, stage="select")

    p = sub.add_parser("run", help="cluster + score + select in one go")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    _add_common(p, ratio=True, kmeans=True)
    _add_scoring_flags(p)
    _add_select_flags(p)
    _add_bandwidth_flag(p)
    p.set_defaults(func=cmd_run, stage="run")

    p = sub.add_parser("synth", help="generate a planted-cluster dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", default=None, help="JSON spec file (overrides the flags below)")
    p.add_argument("--clusters", type=int, default=None, help="number of planted clusters")
    p.add_argument(
        "--points",
        default=None,
        help="points per cluster: N, LO:HI for a seeded range, or a comma list",
    )
    p.add_argument("--dim", type=int, default=None, help="feature dimension (even)")
    p.add_argument("--spread-deg", dest="spread_deg", type=float, default=None)
    p.add_argument("--inter-sim", dest="inter_sim", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth, stage="synth")

    p = sub.add_parser("report", help="score a coreset against planted ground truth")
    p.add_argument("--coreset", required=True, help="path to the .coreset.json file")
    p.add_argument("--features", required=True, help="prefix of the manifest")
    p.add_argument("--truth", required=True, help="prefix of the .truth.json file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report, stage="report")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except CoincideError as exc:
        payload = {
            "error": {
                "stage": getattr(ns, "stage", "cli"),
                "type": type(exc).__name__,
                "message": str(exc),
                "hint": exc.hint,
            }
        }
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1
    except OSError as exc:
        payload = {
            "error": {
                "stage": getattr(ns, "stage", "cli"),
                "type": type(exc).__name__,
                "message": str(exc),
                "hint": "check that the input paths exist and are readable",
            }
        }
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
