"""Gaussian-mixture embedding datasets with a controllable language shift.

Class means sit at mutually equidistant scaled basis vertices, jointly
displaced from the origin by a common vector of norm ``mean_offset_norm``
(real embeddings live in a narrow cone away from the origin; this is what
makes mean-centering matter). Source splits sample isotropic Gaussians
around the means; target splits add one fixed offset vector to every
sample, simulating a constant cross-lingual representation shift.

Both the common displacement and the language shift mix a component inside
the span of the class-mean differences with an orthogonal remainder
(fractions MEAN_SPAN_BIAS / SHIFT_SPAN_BIAS). The in-span part of the
language shift reliably crosses decision boundaries of the source-fitted
classifier; the in-span part of the common displacement degrades
normalize-only nearest-centroid geometry that mean-centering repairs.

Stored logits come from the closed-form Bayes-optimal linear classifier of
the SOURCE mixture, so zero-shot rows are runnable and degrade on shifted
targets exactly like a source-fine-tuned model would.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import ConfigError, InvariantViolation
from .store import (
    EmbeddingDataset,
    MeanVector,
    compute_mean_vector,
    save_mean_vector,
    write_emb1,
)

SHIFT_SPAN_BIAS = 0.45
MEAN_SPAN_BIAS = 0.75
SOURCE_LANGUAGE = "src"
TARGET_LANGUAGE = "tgt"
TASK_NAME = "synthetic"


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator parameters; class_separation is in units of noise_sigma."""

    dim: int = 8
    num_classes: int = 3
    class_separation: float = 10.0
    shift_vector_norm: float = 0.0
    per_split_counts: tuple[int, int, int] = (3000, 600, 1200)
    noise_sigma: float = 1.0
    seed: int = 0
    mean_offset_norm: float = 30.0

    def validate(self) -> "SyntheticSpec":
        if self.dim < self.num_classes:
            raise ConfigError(
                f"dim {self.dim} must be >= num_classes {self.num_classes} "
                "for the simplex construction"
            )
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.class_separation < 0:
            raise ConfigError("class_separation must be >= 0")
        if self.shift_vector_norm < 0:
            raise ConfigError("shift_vector_norm must be >= 0")
        if len(self.per_split_counts) != 3 or any(c < 1 for c in self.per_split_counts):
            raise ConfigError("per_split_counts must be three positive integers")
        if not self.noise_sigma > 0:
            raise ConfigError(f"noise_sigma must be > 0, got {self.noise_sigma}")
        if self.mean_offset_norm < 0:
            raise ConfigError("mean_offset_norm must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        return self

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "num_classes": self.num_classes,
            "class_separation": self.class_separation,
            "shift_vector_norm": self.shift_vector_norm,
            "per_split_counts": list(self.per_split_counts),
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "mean_offset_norm": self.mean_offset_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys: {sorted(unknown)}")
        known = dict(d)
        if "per_split_counts" in known:
            known["per_split_counts"] = tuple(known["per_split_counts"])
        return cls(**known).validate()


@dataclass
class OracleParams:
    """True mixture parameters, enough to evaluate the Bayes rule exactly."""

    source_means: np.ndarray
    offset: np.ndarray
    noise_sigma: float

    def means_for(self, population: Literal["source", "target"]) -> np.ndarray:
        if population == "source":
            return self.source_means
        if population == "target":
            return self.source_means + self.offset
        raise ConfigError(f"unknown population {population!r}")


@dataclass
class SyntheticData:
    """Everything one generation run produces."""

    spec: SyntheticSpec
    source: dict[str, EmbeddingDataset]
    target: dict[str, EmbeddingDataset]
    mean_src: MeanVector
    oracle: OracleParams


def simplex_means(num_classes: int, dim: int, pairwise_distance: float) -> np.ndarray:
    """Scaled basis vertices: ||mu_i - mu_j|| == pairwise_distance for i != j."""
    means = np.zeros((num_classes, dim))
    scale = pairwise_distance / np.sqrt(2.0)
    means[np.arange(num_classes), np.arange(num_classes)] = scale
    return means


def _span_biased_offset(
    rng: np.random.Generator, means: np.ndarray, norm: float, span_bias: float
) -> np.ndarray:
    """Offset of the given norm whose direction mixes a unit vector inside
    the span of class-mean differences (weight span_bias) with a unit vector
    orthogonal to it. Falls back to a fully random direction when the means
    coincide (zero separation)."""
    dim = means.shape[1]
    if norm == 0.0:
        return np.zeros(dim)
    u = rng.standard_normal(dim)
    diffs = means[1:] - means[0]
    if diffs.size == 0 or not diffs.any():
        return norm * u / np.linalg.norm(u)
    q, _ = np.linalg.qr(diffs.T)
    u_span = q @ (q.T @ u)
    u_perp = u - u_span
    span_norm = np.linalg.norm(u_span)
    perp_norm = np.linalg.norm(u_perp)
    direction = span_bias * (u_span / span_norm if span_norm > 0 else q[:, 0])
    if perp_norm > 0:
        direction = direction + (1.0 - span_bias) * u_perp / perp_norm
    direction /= np.linalg.norm(direction)
    return norm * direction


def _balanced_labels(count: int, num_classes: int) -> np.ndarray:
    base, extra = divmod(count, num_classes)
    counts = [base + (1 if c < extra else 0) for c in range(num_classes)]
    return np.repeat(np.arange(num_classes), counts)


def _source_logits(X: np.ndarray, oracle: OracleParams) -> np.ndarray:
    """Bayes-optimal linear scores of the SOURCE mixture (equal priors):
    z_c(x) = (mu_c . x - ||mu_c||^2 / 2) / sigma^2."""
    mu = oracle.source_means
    sq = 0.5 * (mu * mu).sum(axis=1)
    return (X @ mu.T - sq) / (oracle.noise_sigma**2)


def generate(spec: SyntheticSpec) -> SyntheticData:
    """Materialize source train/dev/test, target dev/test, and the source
    mean vector; fully determined by spec.seed."""
    spec.validate()
    rng = np.random.Generator(np.random.Philox(key=np.array([spec.seed, 0], dtype=np.uint64)))
    vertices = simplex_means(
        spec.num_classes, spec.dim, spec.class_separation * spec.noise_sigma
    )
    means = vertices + _span_biased_offset(
        rng, vertices, spec.mean_offset_norm, MEAN_SPAN_BIAS
    )
    offset = _span_biased_offset(
        rng, means, spec.shift_vector_norm, SHIFT_SPAN_BIAS
    )
    oracle = OracleParams(source_means=means, offset=offset, noise_sigma=spec.noise_sigma)
    provenance = "synthetic " + json.dumps(spec.to_dict(), sort_keys=True)

    def make(split: str, count: int, language: str) -> EmbeddingDataset:
        labels = _balanced_labels(count, spec.num_classes)
        X = means[labels] + spec.noise_sigma * rng.standard_normal(
            (count, spec.dim)
        )
        if language == TARGET_LANGUAGE:
            X = X + offset
        return EmbeddingDataset(
            task_name=TASK_NAME,
            language=language,
            split=split,
            dim=spec.dim,
            num_classes=spec.num_classes,
            features=X.astype(np.float32),
            labels=labels,
            logits=_source_logits(X, oracle).astype(np.float32),
            provenance=provenance,
        ).validate().freeze()

    train_n, dev_n, test_n = spec.per_split_counts
    source = {
        "train": make("train", train_n, SOURCE_LANGUAGE),
        "dev": make("dev", dev_n, SOURCE_LANGUAGE),
        "test": make("test", test_n, SOURCE_LANGUAGE),
    }
    target = {
        "dev": make("dev", dev_n, TARGET_LANGUAGE),
        "test": make("test", test_n, TARGET_LANGUAGE),
    }
    mean_src = compute_mean_vector([source["train"], source["dev"]])
    return SyntheticData(
        spec=spec, source=source, target=target, mean_src=mean_src, oracle=oracle
    )


def bayes_assign(
    oracle: OracleParams,
    X: np.ndarray,
    population: Literal["source", "target"] = "source",
) -> np.ndarray:
    """Maximum-likelihood class under the true mixture: nearest true mean."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != oracle.source_means.shape[1]:
        raise InvariantViolation(
            f"X must be 2-D with dim {oracle.source_means.shape[1]}, "
            f"got shape {arr.shape}"
        )
    means = oracle.means_for(population)
    d2 = ((arr[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def write_dataset_dir(data: SyntheticData, out_dir: str | Path) -> None:
    """Write the standard directory layout:
    <out>/{src,tgt}/<split>.emb1 and <out>/mean_src.emb1."""
    out = Path(out_dir)
    for language, splits in (
        (SOURCE_LANGUAGE, data.source),
        (TARGET_LANGUAGE, data.target),
    ):
        lang_dir = out / language
        lang_dir.mkdir(parents=True, exist_ok=True)
        for split, ds in splits.items():
            write_emb1(ds, lang_dir / f"{split}.emb1")
    save_mean_vector(data.mean_src, out / "mean_src.emb1", TASK_NAME)
