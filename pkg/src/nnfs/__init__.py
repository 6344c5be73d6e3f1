"""Nearest-neighbor few-shot inference and episodic evaluation tooling.

Operates on precomputed embedding datasets in the EMB1 container format:
classify small query batches against class centroids built from a handful
of labeled support samples, with optional mean-centering, transductive
shift correction, and prototype rectification; evaluate any method over
deterministic episodes with confidence intervals.
"""

__version__ = "0.1.0"

from .baselines import LinearHead, head_predict, train_head, zero_shot_predict
from .core import (
    NnfsConfig,
    PredictionResult,
    Prototypes,
    center_and_normalize,
    class_prototypes,
    l2_normalize,
    nearest_centroid_assign,
    nnfs_infer,
    proto_rect,
    soft_predictions,
    transductive_shift,
)
from .episodes import (
    Episode,
    EpisodeConfig,
    EvalReport,
    compare_methods,
    run_evaluation,
    sample_episode,
    score_episode,
)
from .errors import (
    ConfigError,
    FormatError,
    InsufficientDataError,
    InvariantViolation,
    NnfsError,
    NumericError,
)
from .store import (
    EmbeddingDataset,
    MeanVector,
    compute_mean_vector,
    load_mean_vector,
    read_emb1,
    save_mean_vector,
    write_emb1,
)
from .synthetic import OracleParams, SyntheticSpec, bayes_assign, generate

__all__ = [
    "__version__",
    "ConfigError",
    "Episode",
    "EpisodeConfig",
    "EvalReport",
    "EmbeddingDataset",
    "FormatError",
    "InsufficientDataError",
    "InvariantViolation",
    "LinearHead",
    "MeanVector",
    "NnfsConfig",
    "NnfsError",
    "NumericError",
    "OracleParams",
    "PredictionResult",
    "Prototypes",
    "SyntheticSpec",
    "bayes_assign",
    "center_and_normalize",
    "class_prototypes",
    "compare_methods",
    "compute_mean_vector",
    "generate",
    "head_predict",
    "l2_normalize",
    "load_mean_vector",
    "nearest_centroid_assign",
    "nnfs_infer",
    "proto_rect",
    "read_emb1",
    "run_evaluation",
    "sample_episode",
    "save_mean_vector",
    "score_episode",
    "soft_predictions",
    "train_head",
    "transductive_shift",
    "write_emb1",
    "zero_shot_predict",
]
