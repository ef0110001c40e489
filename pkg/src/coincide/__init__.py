"""Cluster-budgeted coreset selection for multimodal instruction data.

The pipeline: unit-norm activation features go through spherical
k-means; each cluster earns a transfer proxy (centroid similarity to the
other clusters) and a kernel density; a softmax over proxy/(tau *
density) sets integer per-cluster budgets; inside each cluster a greedy
MMD minimizer (or a baseline strategy) picks the representatives.

Typical use::

    from coincide import CoincideSelector
    selector = CoincideSelector(k=50, ratio=0.2, seed=7).fit(features)
    coreset_rows = selector.transform(features)

The same stages are exposed as the ``coincide`` command-line tool and as
composable functions below.
"""

from .cluster import (
    ClusterModel,
    KMeansConfig,
    SphericalKMeans,
    assign,
    load_cluster_model,
    save_cluster_model,
)
from .errors import (
    BadMagicError,
    CoincideError,
    ConfigError,
    FormatError,
    ManifestError,
    NormViolationError,
    TruncatedFileError,
    UnsupportedVersionError,
    ValidationError,
)
from .features import (
    LayerFeaturePair,
    aggregate_layer,
    compose_multimodal,
    features_from_tokens,
    load_token_fixture,
)
from .kernels import gaussian_kernel
from .sampling import (
    CoresetSelection,
    MmdState,
    assemble,
    load_coreset,
    mmd_squared,
    save_coreset,
    select_mmd_greedy,
    select_nearest_centroid,
    select_random,
)
from .scoring import (
    ClusterScores,
    TransferLossTable,
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
from .selector import CoincideSelector, compute_cluster_scores, resolve_n_core, run_selection
from .store import (
    DatasetManifest,
    FeatureFileHeader,
    FeatureMatrix,
    read_features,
    read_manifest,
    write_features,
)
from .synth import (
    SelectionReport,
    SynthSpec,
    entropy_bits,
    evaluate_selection,
    generate,
    gini_coefficient,
    load_truth,
    save_truth,
    select_by_global_centroid,
)

__version__ = "0.1.0"

__all__ = [
    "BadMagicError",
    "ClusterModel",
    "ClusterScores",
    "CoincideError",
    "CoincideSelector",
    "ConfigError",
    "CoresetSelection",
    "DatasetManifest",
    "FeatureFileHeader",
    "FeatureMatrix",
    "FormatError",
    "KMeansConfig",
    "LayerFeaturePair",
    "ManifestError",
    "MmdState",
    "NormViolationError",
    "SelectionReport",
    "SphericalKMeans",
    "SynthSpec",
    "TransferLossTable",
    "TruncatedFileError",
    "UnsupportedVersionError",
    "ValidationError",
    "aggregate_layer",
    "allocate_budgets",
    "assemble",
    "assign",
    "compose_multimodal",
    "compute_cluster_scores",
    "density",
    "entropy_bits",
    "evaluate_selection",
    "features_from_tokens",
    "gaussian_kernel",
    "generate",
    "gini_coefficient",
    "load_cluster_model",
    "load_coreset",
    "load_loss_tables",
    "load_scores",
    "load_token_fixture",
    "load_truth",
    "mmd_squared",
    "pearson",
    "read_features",
    "read_manifest",
    "resolve_n_core",
    "run_selection",
    "save_cluster_model",
    "save_coreset",
    "save_scores",
    "save_truth",
    "select_by_global_centroid",
    "select_mmd_greedy",
    "select_nearest_centroid",
    "select_random",
    "transfer_proxy",
    "transfer_proxy_all",
    "transferability_from_losses",
    "write_features",
    "__version__",
]
