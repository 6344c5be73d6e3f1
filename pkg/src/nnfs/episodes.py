"""Episodic testing: deterministic sampling, per-episode scoring, aggregation.

An episode draws C classes, N support rows per class from one split, and a
fixed quota of query rows per class from a different split, then scores one
method on it by accuracy. Reported statistics are the mean episode score and
the 95% confidence half-width 1.96 * s / sqrt(n) (sample stddev, n-1
divisor).

RNG contract: each episode uses its own Philox4x64 counter-based generator
keyed by (base_seed, episode_index). The map (base_seed, episode_index) ->
episode is therefore a pure function: results are identical across runs,
execution orders, and thread counts.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .baselines import head_predict, train_head, zero_shot_predict, _softmax_rows
from .core import METHOD_CONFIGS, NnfsConfig, l2_normalize, nnfs_infer
from .errors import ConfigError, InsufficientDataError, InvariantViolation
from .store import EmbeddingDataset, MeanVector

METHODS = ("zero-shot", "nn", "nn+proto", "nn+norm", "nn+norm+proto", "head-ft")
MIN_EPISODES_BEFORE_STOP = 30


@dataclass(frozen=True)
class EpisodeConfig:
    """Protocol constants for one evaluation run."""

    ways: int = 3
    shots: int = 5
    queries_per_class: int = 15
    num_episodes: int = 300
    base_seed: int = 0
    ci_stop_threshold: float | None = None

    def validate(self) -> "EpisodeConfig":
        if self.ways < 2:
            raise ConfigError(f"ways must be >= 2, got {self.ways}")
        if self.shots < 1:
            raise ConfigError(f"shots must be >= 1, got {self.shots}")
        if self.queries_per_class < 1:
            raise ConfigError(
                f"queries_per_class must be >= 1, got {self.queries_per_class}"
            )
        if self.num_episodes < 1:
            raise ConfigError(f"num_episodes must be >= 1, got {self.num_episodes}")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigError("base_seed must fit in an unsigned 64-bit integer")
        return self

    def to_dict(self) -> dict:
        return {
            "ways": self.ways,
            "shots": self.shots,
            "queries_per_class": self.queries_per_class,
            "num_episodes": self.num_episodes,
            "base_seed": self.base_seed,
            "ci_stop_threshold": self.ci_stop_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class Episode:
    """Index sets defining one C-way-N-shot support/query draw."""

    episode_index: int
    selected_classes: tuple[int, ...]
    support_indices: tuple[tuple[int, ...], ...]
    query_indices: tuple[tuple[int, ...], ...]


@dataclass
class EvalReport:
    """Aggregate result of one (method, task, language) evaluation run."""

    method: str
    task: str
    language: str
    config: EpisodeConfig
    per_episode_scores: list[float]
    mean_accuracy: float
    ci_half_width_95: float
    wall_time_per_episode: float
    episodes_run: int
    manifest: dict | None = None

    def to_dict(self) -> dict:
        """JSON schema: method, task, language (strings); config (object
        with ways, shots, queries_per_class, num_episodes, base_seed,
        ci_stop_threshold); per_episode_scores (array of floats in [0, 1],
        ordered by episode index); mean_accuracy, ci_half_width_95,
        wall_time_per_episode (floats); episodes_run (int); manifest
        (object, present in CLI-written files)."""
        d = {
            "method": self.method,
            "task": self.task,
            "language": self.language,
            "config": self.config.to_dict(),
            "per_episode_scores": self.per_episode_scores,
            "mean_accuracy": self.mean_accuracy,
            "ci_half_width_95": self.ci_half_width_95,
            "wall_time_per_episode": self.wall_time_per_episode,
            "episodes_run": self.episodes_run,
        }
        if self.manifest is not None:
            d["manifest"] = self.manifest
        return d

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            method=d["method"],
            task=d["task"],
            language=d["language"],
            config=EpisodeConfig.from_dict(d["config"]),
            per_episode_scores=list(d["per_episode_scores"]),
            mean_accuracy=d["mean_accuracy"],
            ci_half_width_95=d["ci_half_width_95"],
            wall_time_per_episode=d["wall_time_per_episode"],
            episodes_run=d["episodes_run"],
            manifest=d.get("manifest"),
        )

    def markdown_row(self) -> str:
        return (
            f"| {self.method} | {self.language} | {100 * self.mean_accuracy:.1f} "
            f"| ±{100 * self.ci_half_width_95:.2f} | {self.episodes_run} |"
        )


def markdown_table(reports: Sequence[EvalReport]) -> str:
    lines = [
        "| method | language | accuracy | 95% CI | episodes |",
        "|---|---|---|---|---|",
    ]
    lines += [r.markdown_row() for r in reports]
    return "\n".join(lines)


def ci_half_width(scores: Sequence[float]) -> float:
    """95% confidence half-width: 1.96 * sample stddev (n-1) / sqrt(n)."""
    arr = np.asarray(scores, dtype=np.float64)
    n = arr.shape[0]
    if n <= 1:
        return 0.0
    return float(1.96 * arr.std(ddof=1) / np.sqrt(n))


def episode_rng(base_seed: int, episode_index: int) -> np.random.Generator:
    """Philox4x64 generator keyed by (base_seed, episode_index)."""
    key = np.array([base_seed, episode_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _check_split_pair(
    support_split: EmbeddingDataset, query_split: EmbeddingDataset
) -> None:
    if support_split.split == query_split.split:
        raise ConfigError(
            "support and query must come from different splits, both are "
            f"{support_split.split!r}"
        )
    if support_split.num_classes != query_split.num_classes:
        raise InvariantViolation(
            f"num_classes mismatch: support {support_split.num_classes}, "
            f"query {query_split.num_classes}"
        )
    if support_split.dim != query_split.dim:
        raise InvariantViolation(
            f"dim mismatch: support {support_split.dim}, query {query_split.dim}"
        )


def sample_episode(
    support_split: EmbeddingDataset,
    query_split: EmbeddingDataset,
    config: EpisodeConfig,
    episode_index: int,
) -> Episode:
    """Draw one episode, fully determined by (base_seed, episode_index).

    Classes are chosen uniformly without replacement from the dataset's class
    set; per-class row indices uniformly without replacement within each
    split. Support and query indices never collide because they come from
    different splits.
    """
    config.validate()
    _check_split_pair(support_split, query_split)
    if config.ways > support_split.num_classes:
        raise ConfigError(
            f"ways {config.ways} exceeds dataset num_classes "
            f"{support_split.num_classes}"
        )
    rng = episode_rng(config.base_seed, episode_index)
    selected = rng.permutation(support_split.num_classes)[: config.ways]
    support_idx = []
    query_idx = []
    for cls in selected:
        cls = int(cls)
        for split, quota, bucket in (
            (support_split, config.shots, support_idx),
            (query_split, config.queries_per_class, query_idx),
        ):
            pool = split.class_indices(cls)
            if pool.shape[0] < quota:
                raise InsufficientDataError(
                    f"class {cls} has {pool.shape[0]} samples in split "
                    f"{split.split!r}, need {quota}"
                )
            chosen = rng.choice(pool, size=quota, replace=False)
            bucket.append(tuple(int(i) for i in chosen))
    return Episode(
        episode_index=episode_index,
        selected_classes=tuple(int(c) for c in selected),
        support_indices=tuple(support_idx),
        query_indices=tuple(query_idx),
    )


def _gather(split: EmbeddingDataset, per_class: Sequence[Sequence[int]]):
    """Stack the selected rows; labels become positions in selected_classes."""
    idx = np.concatenate([np.asarray(ix, dtype=np.int64) for ix in per_class])
    labels = np.concatenate(
        [np.full(len(ix), pos, dtype=np.int64) for pos, ix in enumerate(per_class)]
    )
    return split.features[idx].astype(np.float64), labels, idx


def score_episode(
    episode: Episode,
    support_split: EmbeddingDataset,
    query_split: EmbeddingDataset,
    method: str,
    m_s: Union[MeanVector, None] = None,
    head_epochs: int | None = None,
    head_lr: float | None = None,
) -> float:
    """Accuracy of one method on one episode.

    The episode's support and query rows are materialized identically for
    every method; episode labels are positional (class
    ``selected_classes[i]`` maps to positional label i). Zero-shot reads the
    stored logits restricted to the selected classes' columns and ignores
    the materialized support set entirely.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    X_s, y_s, _ = _gather(support_split, episode.support_indices)
    X_q, y_true, q_idx = _gather(query_split, episode.query_indices)

    if method == "zero-shot":
        if not query_split.has_logits:
            raise ConfigError(
                "zero-shot requires stored logits (has_logits is false)"
            )
        full = zero_shot_predict(query_split, q_idx)
        cols = np.asarray(episode.selected_classes, dtype=np.int64)
        restricted = _softmax_rows(
            np.log(np.maximum(full.distribution[:, cols], 1e-300))
        )
        predicted = np.argmax(restricted, axis=1)
    elif method == "head-ft":
        kwargs = {}
        if head_epochs is not None:
            kwargs["epochs"] = head_epochs
        if head_lr is not None:
            kwargs["learning_rate"] = head_lr
        head = train_head(
            (l2_normalize(X_s), y_s), len(episode.selected_classes), **kwargs
        )
        predicted = head_predict(head, l2_normalize(X_q)).hard_labels
    else:
        result = nnfs_infer(
            (X_s, y_s),
            X_q,
            m_s,
            NnfsConfig.from_method(method),
            num_classes=len(episode.selected_classes),
            check_inputs=False,
        )
        predicted = result.hard_labels
    return float((predicted == y_true).mean())


def _method_needs_mean(method: str) -> bool:
    return method in METHOD_CONFIGS and METHOD_CONFIGS[method]["use_norm"]


def run_evaluation(
    support_split: EmbeddingDataset,
    query_split: EmbeddingDataset,
    method: str,
    m_s: Union[MeanVector, None],
    config: EpisodeConfig,
    threads: int = 1,
) -> EvalReport:
    """Score ``config.num_episodes`` episodes and aggregate.

    With ``ci_stop_threshold`` set, stops once the half-width drops to the
    threshold after at least 30 episodes. Scores are ordered by episode
    index and identical for any thread count.
    """
    config.validate()
    if _method_needs_mean(method) and m_s is None:
        raise ConfigError(f"method {method!r} requires a mean vector (m_s)")

    def one(i: int) -> float:
        episode = sample_episode(support_split, query_split, config, i)
        return score_episode(episode, support_split, query_split, method, m_s)

    start = time.perf_counter()
    scores: list[float] = []
    if config.ci_stop_threshold is not None:
        for i in range(config.num_episodes):
            scores.append(one(i))
            if (
                len(scores) >= MIN_EPISODES_BEFORE_STOP
                and ci_half_width(scores) <= config.ci_stop_threshold
            ):
                break
    elif threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(one, range(config.num_episodes)))
    else:
        scores = [one(i) for i in range(config.num_episodes)]
    elapsed = time.perf_counter() - start

    return EvalReport(
        method=method,
        task=query_split.task_name,
        language=query_split.language,
        config=config,
        per_episode_scores=scores,
        mean_accuracy=float(np.mean(scores)),
        ci_half_width_95=ci_half_width(scores),
        wall_time_per_episode=elapsed / len(scores),
        episodes_run=len(scores),
    )


def compare_methods(
    support_split: EmbeddingDataset,
    query_split: EmbeddingDataset,
    methods: Sequence[str],
    m_s: Union[MeanVector, None],
    config: EpisodeConfig,
    threads: int = 1,
) -> list[EvalReport]:
    """Evaluate several methods on the SAME episode stream (same base_seed),
    so per-episode deltas are paired."""
    return [
        run_evaluation(support_split, query_split, m, m_s, config, threads=threads)
        for m in methods
    ]
