"""Nearest-neighbor few-shot inference over embedding features.

The pipeline classifies a query batch against class centroids built from a
small labeled support set, with three optional stages:

  * norm  — subtract the source-corpus mean and L2-normalize every row
            (plain L2 normalization when disabled);
  * shift — add the support-minus-query mean difference to the query rows,
            correcting a constant distribution offset transductively;
  * rect  — re-estimate each centroid from the pooled support and
            pseudo-labeled query samples, weighting every pooled sample by
            the softmax (over classes) of its cosine similarity to the
            initial centroids.

Distance is cosine distance ``1 - cos(u, v)`` throughout. All functions are
pure; identical inputs give identical outputs, and ties break toward the
lowest class index. Public operations validate their inputs; ``nnfs_infer``
validates once at entry and composes the same unchecked kernels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import InvariantViolation, NumericError
from .store import MeanVector

ArrayLike = Union[np.ndarray, Sequence[Sequence[float]]]

METHOD_CONFIGS = {
    "nn": dict(use_norm=False, use_shift=False, use_proto_rect=False),
    "nn+proto": dict(use_norm=False, use_shift=False, use_proto_rect=True),
    "nn+norm": dict(use_norm=True, use_shift=True, use_proto_rect=False),
    "nn+norm+proto": dict(use_norm=True, use_shift=True, use_proto_rect=True),
}


@dataclass(frozen=True)
class NnfsConfig:
    """Ablation switches for the inference pipeline.

    The published method rows map onto configs as::

        nn             -> norm off, shift off, rect off
        nn+proto       -> norm off, shift off, rect on
        nn+norm        -> norm on,  shift on,  rect off
        nn+norm+proto  -> norm on,  shift on,  rect on

    The mean-shift correction is bundled with the norm stage in the method
    rows, but stays independently switchable here. Distance is fixed:
    cosine distance 1 - cos.
    """

    use_norm: bool = True
    use_shift: bool = True
    use_proto_rect: bool = True

    @classmethod
    def from_method(cls, method: str) -> "NnfsConfig":
        if method not in METHOD_CONFIGS:
            raise InvariantViolation(
                f"unknown method {method!r}; expected one of {sorted(METHOD_CONFIGS)}"
            )
        return cls(**METHOD_CONFIGS[method])


@dataclass
class Prototypes:
    """Per-class mean representations (initial or rectified)."""

    num_classes: int
    dim: int
    means: np.ndarray
    rectified: bool = False

    def __post_init__(self) -> None:
        self.means = np.asarray(self.means, dtype=np.float64)


@dataclass
class PredictionResult:
    """Distances, soft label distribution, and hard labels for a query batch.

    ``distances`` is None for methods that never compute one (stored-logits
    and linear-head predictions)."""

    num_queries: int
    num_classes: int
    distances: np.ndarray | None
    distribution: np.ndarray
    hard_labels: np.ndarray


def as_feature_matrix(X: ArrayLike, name: str = "X") -> np.ndarray:
    """Coerce to a finite 2-D float64 matrix with at least one row."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise InvariantViolation(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[0] < 1:
        raise InvariantViolation(f"{name} must have at least one row")
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains non-finite values")
    return arr


def _mean_values(m_s: Union[MeanVector, ArrayLike]) -> np.ndarray:
    values = m_s.values if isinstance(m_s, MeanVector) else m_s
    return np.asarray(values, dtype=np.float64).reshape(-1)


def _row_norms(arr: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", arr, arr))


def _labels_array(y: Sequence[int], rows: int, what: str) -> np.ndarray:
    labels = np.asarray(y, dtype=np.int64).reshape(-1)
    if labels.shape[0] != rows:
        raise InvariantViolation(
            f"{what} length {labels.shape[0]} != row count {rows}"
        )
    return labels


# ------------------------------------------------------------------ kernels
# Operate on pre-validated float64 matrices; only data-dependent degeneracy
# (zero vectors, empty classes) is checked here.


def _first_zero(norms: np.ndarray) -> int:
    return int(np.flatnonzero(norms == 0.0)[0])


def _center_normalize(arr: np.ndarray, mean: np.ndarray) -> np.ndarray:
    centered = arr - mean
    norms = _row_norms(centered)
    if not norms.all():
        raise NumericError(
            f"row {_first_zero(norms)} equals the mean vector: "
            "zero vector after centering"
        )
    centered /= norms[:, None]
    return centered


def _unit_rows(arr: np.ndarray) -> np.ndarray:
    norms = _row_norms(arr)
    if not norms.all():
        raise NumericError(
            f"row {_first_zero(norms)} is a zero vector; cannot normalize"
        )
    return arr / norms[:, None]


def _col_means(arr: np.ndarray) -> np.ndarray:
    return np.einsum("ij->j", arr) * (1.0 / arr.shape[0])


def _shift(support: np.ndarray, query: np.ndarray) -> np.ndarray:
    eta = _col_means(support) - _col_means(query)
    return query + eta


def _class_means(support: np.ndarray, labels: np.ndarray, C: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=C)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise InvariantViolation(f"class {int(empty[0])} has no support samples")
    one_hot = np.zeros((support.shape[0], C))
    one_hot[np.arange(support.shape[0]), labels] = 1.0
    return (one_hot.T @ support) / counts[:, None]


def _cosine(A: np.ndarray, B: np.ndarray, a_name: str, b_name: str) -> np.ndarray:
    na = _row_norms(A)
    nb = _row_norms(B)
    for norms, name in ((na, a_name), (nb, b_name)):
        if not norms.all():
            raise NumericError(
                f"{name} row {_first_zero(norms)} has zero norm; cosine undefined"
            )
    sims = (A @ B.T) / np.outer(na, nb)
    return np.clip(sims, -1.0, 1.0)


def _assign(query: np.ndarray, means: np.ndarray) -> np.ndarray:
    distances = 1.0 - _cosine(query, means, "query", "prototype")
    return np.argmin(distances, axis=1)


def _rect(
    support: np.ndarray,
    s_labels: np.ndarray,
    query: np.ndarray,
    q_labels: np.ndarray,
    means: np.ndarray,
    C: int,
) -> np.ndarray:
    pooled = np.vstack([support, query])
    pooled_labels = np.concatenate([s_labels, q_labels])
    counts = np.bincount(pooled_labels, minlength=C)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise InvariantViolation(f"class {int(empty[0])} has zero pooled samples")
    # cosines are clipped into [-1, 1], so the exponentials cannot overflow
    sims = _cosine(pooled, means, "pooled sample", "prototype")
    expd = np.exp(sims)
    weights = expd / expd.sum(axis=1, keepdims=True)
    # each sample contributes only to its own class, with its class's weight
    picked = np.zeros_like(weights)
    rows = np.arange(pooled.shape[0])
    picked[rows, pooled_labels] = weights[rows, pooled_labels]
    return (picked.T @ pooled) / counts[:, None]


def _soft(query: np.ndarray, protos: Prototypes) -> PredictionResult:
    # distances live in [0, 2], so exp(-d) is safely within [e^-2, 1]
    distances = 1.0 - _cosine(query, protos.means, "query", "prototype")
    expd = np.exp(-distances)
    distribution = expd / expd.sum(axis=1, keepdims=True)
    return PredictionResult(
        num_queries=query.shape[0],
        num_classes=protos.num_classes,
        distances=distances,
        distribution=distribution,
        hard_labels=np.argmax(distribution, axis=1),
    )


# ------------------------------------------------------------------ operations


def center_and_normalize(X: ArrayLike, m_s: Union[MeanVector, ArrayLike]) -> np.ndarray:
    """Subtract the source mean from every row, then L2-normalize.

    Raises NumericError naming the row index if any centered row is the zero
    vector (cosine geometry would be undefined downstream).
    """
    arr = as_feature_matrix(X)
    mean = _mean_values(m_s)
    if mean.shape[0] != arr.shape[1]:
        raise InvariantViolation(
            f"mean vector dim {mean.shape[0]} != feature dim {arr.shape[1]}"
        )
    return _center_normalize(arr, mean)


def l2_normalize(X: ArrayLike) -> np.ndarray:
    """Scale every row to unit L2 norm; zero rows are a hard error."""
    return _unit_rows(as_feature_matrix(X))


def transductive_shift(X_s: ArrayLike, X_q: ArrayLike) -> np.ndarray:
    """Add eta = mean(X_s) - mean(X_q) to every query row.

    The output's column-wise mean equals that of the support set; adding any
    constant vector to all query rows leaves the output unchanged because eta
    absorbs it.
    """
    support = as_feature_matrix(X_s, "X_s")
    query = as_feature_matrix(X_q, "X_q")
    if support.shape[1] != query.shape[1]:
        raise InvariantViolation(
            f"dim mismatch: support {support.shape[1]} != query {query.shape[1]}"
        )
    return _shift(support, query)


def class_prototypes(X_s: ArrayLike, Y_s: Sequence[int], num_classes: int) -> Prototypes:
    """Arithmetic mean of support rows per class (initial centroids)."""
    support = as_feature_matrix(X_s, "X_s")
    labels = _labels_array(Y_s, support.shape[0], "support labels")
    if num_classes < 1:
        raise InvariantViolation(f"num_classes must be positive, got {num_classes}")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise InvariantViolation("support labels out of range")
    means = _class_means(support, labels, num_classes)
    return Prototypes(num_classes=num_classes, dim=support.shape[1], means=means)


def nearest_centroid_assign(X_q: ArrayLike, protos: Prototypes) -> np.ndarray:
    """Label each query with the centroid of minimum cosine distance.

    Exact ties break toward the lowest class index.
    """
    query = as_feature_matrix(X_q, "X_q")
    if query.shape[1] != protos.dim:
        raise InvariantViolation(
            f"dim mismatch: query {query.shape[1]} != prototypes {protos.dim}"
        )
    return _assign(query, protos.means)


def proto_rect(
    X_s: ArrayLike,
    Y_s: Sequence[int],
    X_q: ArrayLike,
    y_hat_q: Sequence[int],
    protos_initial: Prototypes,
) -> Prototypes:
    """Re-estimate centroids from pooled support and pseudo-labeled queries.

    For class c, pool the support rows labeled c with the query rows
    pseudo-labeled c. Each pooled row contributes itself weighted by the c-th
    softmax component of its cosine similarities to ALL initial centroids;
    the weighted sum is divided by the pooled count. The weights do not sum
    to the count, so rectified centroids shrink in magnitude — irrelevant
    under cosine distance.

    The query set may be empty (pure support rectification).
    """
    if protos_initial.rectified:
        raise InvariantViolation("prototypes are already rectified")
    support = as_feature_matrix(X_s, "X_s")
    s_labels = _labels_array(Y_s, support.shape[0], "support labels")
    query = np.asarray(X_q, dtype=np.float64)
    if query.size == 0:
        query = query.reshape(0, support.shape[1])
    if query.ndim != 2 or query.shape[1] != support.shape[1]:
        raise InvariantViolation(
            f"X_q must be 2-D with dim {support.shape[1]}, got shape {query.shape}"
        )
    if not np.isfinite(query).all():
        raise NumericError("X_q contains non-finite values")
    q_labels = _labels_array(y_hat_q, query.shape[0], "query pseudo-labels")
    C = protos_initial.num_classes
    means = _rect(support, s_labels, query, q_labels, protos_initial.means, C)
    return Prototypes(num_classes=C, dim=protos_initial.dim, means=means, rectified=True)


def soft_predictions(X_q: ArrayLike, protos: Prototypes) -> PredictionResult:
    """Cosine distances to each centroid, softmaxed (negated) into a
    distribution per query row; hard labels by argmax with lowest-index ties."""
    query = as_feature_matrix(X_q, "X_q")
    if query.shape[1] != protos.dim:
        raise InvariantViolation(
            f"dim mismatch: query {query.shape[1]} != prototypes {protos.dim}"
        )
    return _soft(query, protos)


def nnfs_infer(
    support: tuple[ArrayLike, Sequence[int]],
    query: ArrayLike,
    m_s: Union[MeanVector, ArrayLike, None],
    config: NnfsConfig,
    num_classes: int | None = None,
    check_inputs: bool = True,
) -> PredictionResult:
    """Run the full inference pipeline in stage order.

    norm (or plain L2) on both sets -> shift on the query -> initial
    centroids -> nearest-centroid pseudo-labels -> rectification -> soft
    predictions against the final centroids. Deterministic end to end.

    Internally fuses the stages (one stacked normalization pass, shared row
    norms, normalized support rows treated as exactly unit for the
    rectification weights); the result matches the explicit composition of
    the stage operations within floating-point rounding.

    ``m_s`` may be None when ``config.use_norm`` is off. ``check_inputs``
    skips the input finiteness scan; pass False only for rows gathered from
    a dataset whose load-time invariants already guarantee finite values.
    """
    X_s_raw, Y_s = support
    if check_inputs:
        support_arr = as_feature_matrix(X_s_raw, "support features")
        query_arr = as_feature_matrix(query, "query features")
    else:
        support_arr = np.asarray(X_s_raw, dtype=np.float64)
        query_arr = np.asarray(query, dtype=np.float64)
    if support_arr.shape[1] != query_arr.shape[1]:
        raise InvariantViolation(
            f"dim mismatch: support {support_arr.shape[1]} != "
            f"query {query_arr.shape[1]}"
        )
    labels = _labels_array(Y_s, support_arr.shape[0], "support labels")
    C = int(labels.max()) + 1 if num_classes is None else num_classes
    if labels.min() < 0 or labels.max() >= C:
        raise InvariantViolation("support labels out of range")
    n_support = support_arr.shape[0]

    if config.use_norm:
        if m_s is None:
            raise InvariantViolation("use_norm requires a mean vector m_s")
        mean = _mean_values(m_s)
        if mean.shape[0] != support_arr.shape[1]:
            raise InvariantViolation(
                f"mean vector dim {mean.shape[0]} != feature dim "
                f"{support_arr.shape[1]}"
            )
        stacked = np.empty(
            (n_support + query_arr.shape[0], support_arr.shape[1])
        )
        np.subtract(support_arr, mean, out=stacked[:n_support])
        np.subtract(query_arr, mean, out=stacked[n_support:])
    else:
        stacked = np.vstack([support_arr, query_arr])
    norms = _row_norms(stacked)
    if not norms.all():
        i = _first_zero(norms)
        row = i if i < n_support else i - n_support
        if config.use_norm:
            raise NumericError(
                f"row {row} equals the mean vector: zero vector after centering"
            )
        raise NumericError(f"row {row} is a zero vector; cannot normalize")
    stacked *= (1.0 / norms)[:, None]
    X_s = stacked[:n_support]
    X_q = stacked[n_support:]
    if config.use_shift:
        # in-place on the owned stack; support rows are disjoint
        X_q += _col_means(X_s) - _col_means(X_q)

    means = _class_means(X_s, labels, C)
    proto_norms = _row_norms(means)
    if not proto_norms.all():
        raise NumericError(
            f"prototype row {_first_zero(proto_norms)} has zero norm; "
            "cosine undefined"
        )
    query_norms = _row_norms(X_q)
    if not query_norms.all():
        raise NumericError(
            f"query row {_first_zero(query_norms)} has zero norm; cosine undefined"
        )
    # cosines of every (shifted) row against the initial centroids in one
    # product; support rows have unit norm after the normalization stage
    inv_row_norms = np.empty(stacked.shape[0])
    inv_row_norms[:n_support] = 1.0
    inv_row_norms[n_support:] = 1.0 / query_norms
    sims_all = np.clip(
        (stacked @ means.T) * inv_row_norms[:, None] / proto_norms, -1.0, 1.0
    )
    sims_q = sims_all[n_support:]
    pseudo = np.argmin(1.0 - sims_q, axis=1)

    if config.use_proto_rect:
        pooled_labels = np.concatenate([labels, pseudo])
        counts = np.bincount(pooled_labels, minlength=C)
        expd = np.exp(sims_all)
        weights = expd / expd.sum(axis=1, keepdims=True)
        picked = np.zeros_like(weights)
        rows = np.arange(weights.shape[0])
        picked[rows, pooled_labels] = weights[rows, pooled_labels]
        means = (picked.T @ stacked) / counts[:, None]
        proto_norms = _row_norms(means)
        if not proto_norms.all():
            raise NumericError(
                f"prototype row {_first_zero(proto_norms)} has zero norm; "
                "cosine undefined"
            )
        sims_q = np.clip(
            (X_q @ means.T) * (1.0 / query_norms)[:, None] / proto_norms,
            -1.0,
            1.0,
        )

    distances = 1.0 - sims_q
    expd = np.exp(-distances)
    distribution = expd / expd.sum(axis=1, keepdims=True)
    return PredictionResult(
        num_queries=X_q.shape[0],
        num_classes=C,
        distances=distances,
        distribution=distribution,
        hard_labels=np.argmax(distribution, axis=1),
    )
