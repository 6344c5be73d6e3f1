"""EMB1 embedding dataset container: on-disk format, validation, mean vectors.

Byte layout (all integers little-endian):

    magic      4 bytes ASCII "EMB1"
    header_len u32
    header     header_len bytes of UTF-8 JSON with keys
               {task, language, split, dim, num_classes, num_samples,
                has_logits, provenance}
    features   num_samples x dim float32, row-major
    labels     num_samples x u32
    logits     num_samples x num_classes float32, row-major (iff has_logits)

Directory convention: ``<task>/<language>/<split>.emb1`` plus
``<task>/mean_src.emb1`` for the stored source mean vector. The mean vector
reuses the container with num_samples=1, num_classes=1, labels=[0] and
split="mean".

Features are stored as binary32; downstream arithmetic happens in binary64.
Loaded datasets are immutable (arrays are marked read-only) and safe to share
across threads.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence, Union

import numpy as np

from .errors import FormatError, InvariantViolation

MAGIC = b"EMB1"
SPLITS = ("train", "dev", "test", "mean")
_HEADER_KEYS = (
    "task",
    "language",
    "split",
    "dim",
    "num_classes",
    "num_samples",
    "has_logits",
    "provenance",
)

PathOrStream = Union[str, Path, BinaryIO]


@dataclass
class EmbeddingDataset:
    """A labeled matrix of feature vectors with optional classifier logits."""

    task_name: str
    language: str
    split: str
    dim: int
    num_classes: int
    features: np.ndarray
    labels: np.ndarray
    logits: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels)
        if self.labels.dtype.kind not in "iu":
            self.labels = self.labels.astype(np.int64)
        else:
            self.labels = self.labels.astype(np.int64, copy=False)
        if self.logits is not None:
            self.logits = np.asarray(self.logits, dtype=np.float32)

    @property
    def num_samples(self) -> int:
        return int(self.features.shape[0]) if self.features.ndim == 2 else 0

    @property
    def has_logits(self) -> bool:
        return self.logits is not None

    def validate(self, allow_empty_classes: bool = False) -> "EmbeddingDataset":
        """Check every invariant; raise InvariantViolation naming the first
        violated one. Returns self so calls can be chained."""
        if self.split not in SPLITS:
            raise InvariantViolation(
                f"split must be one of {SPLITS}, got {self.split!r}"
            )
        if self.dim < 1:
            raise InvariantViolation(f"dim must be positive, got {self.dim}")
        if self.num_classes < 1:
            raise InvariantViolation(
                f"num_classes must be positive, got {self.num_classes}"
            )
        if self.features.ndim != 2:
            raise InvariantViolation(
                f"features must be a 2-D matrix, got ndim={self.features.ndim}"
            )
        if self.features.shape[1] != self.dim:
            raise InvariantViolation(
                f"features column count {self.features.shape[1]} != dim {self.dim}"
            )
        if self.labels.ndim != 1:
            raise InvariantViolation(
                f"labels must be 1-D, got ndim={self.labels.ndim}"
            )
        if self.features.shape[0] != self.labels.shape[0]:
            raise InvariantViolation(
                f"features row count {self.features.shape[0]} != labels length "
                f"{self.labels.shape[0]}"
            )
        if not np.isfinite(self.features).all():
            raise InvariantViolation("features contain non-finite values (NaN/Inf)")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            bad = int(
                self.labels[(self.labels < 0) | (self.labels >= self.num_classes)][0]
            )
            raise InvariantViolation(
                f"label {bad} out of range [0, {self.num_classes})"
            )
        if not allow_empty_classes:
            counts = np.bincount(self.labels, minlength=self.num_classes)
            empty = np.flatnonzero(counts == 0)
            if empty.size:
                raise InvariantViolation(
                    f"class {int(empty[0])} has no samples "
                    "(pass allow_empty_classes=True to permit)"
                )
        if self.logits is not None:
            if self.logits.ndim != 2 or self.logits.shape != (
                self.features.shape[0],
                self.num_classes,
            ):
                raise InvariantViolation(
                    f"logits shape {self.logits.shape} != "
                    f"({self.features.shape[0]}, {self.num_classes})"
                )
            if not np.isfinite(self.logits).all():
                raise InvariantViolation("logits contain non-finite values (NaN/Inf)")
        return self

    def freeze(self) -> "EmbeddingDataset":
        """Mark the underlying arrays read-only."""
        self.features.flags.writeable = False
        self.labels.flags.writeable = False
        if self.logits is not None:
            self.logits.flags.writeable = False
        return self

    def class_indices(self, cls: int) -> np.ndarray:
        """Row indices carrying label ``cls``, ascending."""
        return np.flatnonzero(self.labels == cls)


@dataclass
class MeanVector:
    """Mean feature representation of one or more datasets."""

    dim: int
    values: np.ndarray
    provenance: str = ""

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)

    def validate(self) -> "MeanVector":
        if self.dim < 1:
            raise InvariantViolation(f"dim must be positive, got {self.dim}")
        if self.values.shape[0] != self.dim:
            raise InvariantViolation(
                f"values length {self.values.shape[0]} != dim {self.dim}"
            )
        if not np.isfinite(self.values).all():
            raise InvariantViolation("mean vector contains non-finite values")
        return self


def _open_for(dest: PathOrStream, mode: str):
    if isinstance(dest, (str, Path)):
        return open(dest, mode), True
    return dest, False


def write_emb1(dataset: EmbeddingDataset, destination: PathOrStream) -> None:
    """Serialize a validated dataset to the EMB1 byte layout.

    Validates before any byte is written; a write-then-read round trip
    reproduces the dataset bit-exactly.
    """
    dataset.validate()
    header = {
        "task": dataset.task_name,
        "language": dataset.language,
        "split": dataset.split,
        "dim": int(dataset.dim),
        "num_classes": int(dataset.num_classes),
        "num_samples": int(dataset.num_samples),
        "has_logits": bool(dataset.has_logits),
        "provenance": dataset.provenance,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    stream, owned = _open_for(destination, "wb")
    try:
        stream.write(MAGIC)
        stream.write(np.uint32(len(header_bytes)).astype("<u4").tobytes())
        stream.write(header_bytes)
        stream.write(np.ascontiguousarray(dataset.features, dtype="<f4").tobytes())
        stream.write(dataset.labels.astype("<u4").tobytes())
        if dataset.logits is not None:
            stream.write(np.ascontiguousarray(dataset.logits, dtype="<f4").tobytes())
    finally:
        if owned:
            stream.close()


def read_emb1(source: PathOrStream) -> EmbeddingDataset:
    """Parse and validate an EMB1 stream.

    Raises FormatError for malformed bytes (bad magic, truncated payload with
    expected vs. actual counts, header/payload size mismatch) and
    InvariantViolation when the decoded dataset breaks an invariant.
    """
    stream, owned = _open_for(source, "rb")
    try:
        magic = stream.read(4)
        if magic != MAGIC:
            raise FormatError(f"bad magic: expected {MAGIC!r}, got {magic!r}")
        raw_len = stream.read(4)
        if len(raw_len) != 4:
            raise FormatError("truncated stream: header length missing")
        header_len = int(np.frombuffer(raw_len, dtype="<u4")[0])
        header_bytes = stream.read(header_len)
        if len(header_bytes) != header_len:
            raise FormatError(
                f"truncated header: expected {header_len} bytes, got {len(header_bytes)}"
            )
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"header is not valid UTF-8 JSON: {exc}") from exc
        missing = [k for k in _HEADER_KEYS if k not in header]
        if missing:
            raise FormatError(f"header missing keys: {missing}")

        n = int(header["num_samples"])
        dim = int(header["dim"])
        num_classes = int(header["num_classes"])
        if n < 0 or dim < 1 or num_classes < 1:
            raise FormatError(
                f"header sizes invalid: num_samples={n} dim={dim} "
                f"num_classes={num_classes}"
            )
        payload = stream.read()
        feat_bytes = n * dim * 4
        label_bytes = n * 4
        logit_bytes = n * num_classes * 4 if header["has_logits"] else 0
        expected = feat_bytes + label_bytes + logit_bytes
        if len(payload) < feat_bytes:
            raise FormatError(
                f"truncated payload while reading features: expected {feat_bytes} "
                f"bytes (num_samples*dim*4), got {len(payload)}; possible "
                "header/payload dimension mismatch"
            )
        if len(payload) != expected:
            raise FormatError(
                f"payload size mismatch: expected {expected} bytes "
                f"(features {feat_bytes} + labels {label_bytes} + logits "
                f"{logit_bytes}), got {len(payload)}; truncated stream or "
                "header/payload dimension mismatch"
            )
        features = np.frombuffer(payload, dtype="<f4", count=n * dim).reshape(n, dim)
        labels = np.frombuffer(payload, dtype="<u4", count=n, offset=feat_bytes)
        logits = None
        if header["has_logits"]:
            logits = np.frombuffer(
                payload, dtype="<f4", count=n * num_classes,
                offset=feat_bytes + label_bytes,
            ).reshape(n, num_classes)
        dataset = EmbeddingDataset(
            task_name=str(header["task"]),
            language=str(header["language"]),
            split=str(header["split"]),
            dim=dim,
            num_classes=num_classes,
            features=features,
            labels=labels,
            logits=logits,
            provenance=str(header["provenance"]),
        )
        allow_empty = header["split"] == "mean"
        return dataset.validate(allow_empty_classes=allow_empty).freeze()
    finally:
        if owned:
            stream.close()


def _pairwise_rowsum(rows: np.ndarray) -> np.ndarray:
    """Tree-structured sum over axis 0; deterministic and accurate at scale."""
    n = rows.shape[0]
    if n <= 64:
        return np.add.reduce(rows, axis=0)
    half = n // 2
    return _pairwise_rowsum(rows[:half]) + _pairwise_rowsum(rows[half:])


def compute_mean_vector(datasets: Sequence[EmbeddingDataset]) -> MeanVector:
    """Arithmetic mean over all feature rows of all datasets.

    Uses pairwise (tree) summation in float64, which keeps the result
    deterministic and permutation-stable at the hundred-thousand-row scale.
    """
    datasets = list(datasets)
    if not datasets:
        raise InvariantViolation("compute_mean_vector requires at least one dataset")
    dim = datasets[0].dim
    for ds in datasets[1:]:
        if ds.dim != dim:
            raise InvariantViolation(
                f"dim mismatch across datasets: {ds.dim} != {dim}"
            )
    total = sum(ds.num_samples for ds in datasets)
    if total < 1:
        raise InvariantViolation("combined sample count must be >= 1")
    partials = np.stack(
        [_pairwise_rowsum(ds.features.astype(np.float64)) for ds in datasets]
    )
    values = _pairwise_rowsum(partials) / float(total)
    provenance = "mean of " + ", ".join(
        f"{ds.task_name}/{ds.language}/{ds.split}[{ds.num_samples}]"
        for ds in datasets
    )
    return MeanVector(dim=dim, values=values, provenance=provenance).validate()


def mean_vector_to_dataset(mean: MeanVector, task_name: str) -> EmbeddingDataset:
    """Wrap a mean vector in the EMB1 container (one row, split 'mean')."""
    mean.validate()
    return EmbeddingDataset(
        task_name=task_name,
        language="",
        split="mean",
        dim=mean.dim,
        num_classes=1,
        features=mean.values.reshape(1, -1),
        labels=np.array([0]),
        logits=None,
        provenance=mean.provenance,
    )


def dataset_to_mean_vector(dataset: EmbeddingDataset) -> MeanVector:
    if dataset.num_samples != 1:
        raise InvariantViolation(
            f"mean container must hold exactly 1 row, got {dataset.num_samples}"
        )
    return MeanVector(
        dim=dataset.dim,
        values=dataset.features[0].astype(np.float64),
        provenance=dataset.provenance,
    ).validate()


def save_mean_vector(mean: MeanVector, destination: PathOrStream, task_name: str) -> None:
    write_emb1(mean_vector_to_dataset(mean, task_name), destination)


def load_mean_vector(source: PathOrStream) -> MeanVector:
    return dataset_to_mean_vector(read_emb1(source))


def roundtrip_bytes(dataset: EmbeddingDataset) -> bytes:
    """Serialize to an in-memory EMB1 byte string."""
    buf = io.BytesIO()
    write_emb1(dataset, buf)
    return buf.getvalue()
