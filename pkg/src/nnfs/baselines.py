"""Comparison baselines: stored-logits zero-shot and a linear head probe.

The head probe is multinomial logistic regression on frozen features,
trained by full-batch gradient descent from zero-initialized parameters.
Desk-scale defaults (lr 0.1, 300 epochs, no weight decay, no early stopping)
keep episodes deterministic; the published fine-tuning rate targets a full
language model and would not move a fresh linear probe.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import PredictionResult, as_feature_matrix
from .errors import ConfigError, InvariantViolation, NumericError
from .store import EmbeddingDataset

DEFAULT_HEAD_EPOCHS = 300
DEFAULT_HEAD_LR = 0.1


@dataclass
class LinearHead:
    """Softmax classifier parameters plus the per-epoch loss trace."""

    weights: np.ndarray
    bias: np.ndarray
    training_log: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def zero_shot_predict(
    dataset: EmbeddingDataset, query_indices: Sequence[int]
) -> PredictionResult:
    """Softmax of the stored logits rows; no support set involved."""
    if not dataset.has_logits:
        raise ConfigError(
            "zero-shot prediction requires stored logits (has_logits is false)"
        )
    idx = np.asarray(query_indices, dtype=np.int64).reshape(-1)
    logits = dataset.logits[idx].astype(np.float64)
    distribution = _softmax_rows(logits)
    return PredictionResult(
        num_queries=int(idx.shape[0]),
        num_classes=dataset.num_classes,
        distances=None,
        distribution=distribution,
        hard_labels=np.argmax(distribution, axis=1),
    )


def train_head(
    support: tuple[np.ndarray, Sequence[int]],
    num_classes: int,
    epochs: int = DEFAULT_HEAD_EPOCHS,
    learning_rate: float = DEFAULT_HEAD_LR,
) -> LinearHead:
    """Fit the probe by full-batch gradient descent on softmax cross-entropy.

    Parameters start at zero. The training log holds (epoch, mean loss) for
    epoch 0 (initial parameters) through ``epochs`` (after the final update);
    on this convex objective the trace is non-increasing for small enough
    learning rates.
    """
    X_raw, y = support
    X = as_feature_matrix(X_raw, "support features")
    labels = np.asarray(y, dtype=np.int64).reshape(-1)
    if labels.shape[0] != X.shape[0]:
        raise InvariantViolation("support labels length mismatch")
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if learning_rate < 0:
        raise ConfigError(f"learning_rate must be >= 0, got {learning_rate}")
    counts = np.bincount(labels, minlength=num_classes)
    if (counts == 0).any():
        raise InvariantViolation(
            f"class {int(np.flatnonzero(counts == 0)[0])} has no support samples"
        )

    n = X.shape[0]
    one_hot = np.zeros((n, num_classes))
    one_hot[np.arange(n), labels] = 1.0
    W = np.zeros((num_classes, X.shape[1]))
    b = np.zeros(num_classes)
    log: list[tuple[int, float]] = []
    for epoch in range(epochs + 1):
        probs = _softmax_rows(X @ W.T + b)
        with np.errstate(divide="ignore"):
            loss = float(-np.log(probs[np.arange(n), labels]).mean())
        if not np.isfinite(loss):
            raise NumericError(
                f"non-finite loss at epoch {epoch}; learning rate too large"
            )
        log.append((epoch, loss))
        if epoch == epochs:
            break
        grad = probs - one_hot
        W -= learning_rate * (grad.T @ X) / n
        b -= learning_rate * grad.mean(axis=0)
    return LinearHead(weights=W, bias=b, training_log=log)


def head_loss_and_grad(
    head_w: np.ndarray,
    head_b: np.ndarray,
    X: np.ndarray,
    labels: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy and its analytic gradients at given parameters."""
    n = X.shape[0]
    num_classes = head_w.shape[0]
    probs = _softmax_rows(X @ head_w.T + head_b)
    loss = float(-np.log(probs[np.arange(n), labels]).mean())
    one_hot = np.zeros((n, num_classes))
    one_hot[np.arange(n), labels] = 1.0
    grad = probs - one_hot
    return loss, (grad.T @ X) / n, grad.mean(axis=0)


def head_predict(head: LinearHead, X_q: np.ndarray) -> PredictionResult:
    """Softmax(W x + b) per query row; argmax ties go to the lowest index."""
    X = as_feature_matrix(X_q, "X_q")
    if X.shape[1] != head.weights.shape[1]:
        raise InvariantViolation(
            f"dim mismatch: query {X.shape[1]} != head {head.weights.shape[1]}"
        )
    distribution = _softmax_rows(X @ head.weights.T + head.bias)
    return PredictionResult(
        num_queries=X.shape[0],
        num_classes=head.weights.shape[0],
        distances=None,
        distribution=distribution,
        hard_labels=np.argmax(distribution, axis=1),
    )
