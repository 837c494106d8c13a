"""Pre-trained knowledge and datasets: class statistics, feature strata, file I/O.

Binary formats are little-endian with fixed magics so loaders can fail fast
and name the exact byte offset of the first problem.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import as_matrix, as_vector, softmax

FEATURE_MAGIC = b"IFSLFEA1"
KB_MAGIC = b"IFSLKB01"

_FEATURE_HEADER = struct.Struct("<IIQ")  # dim, n_classes, n_samples
_KB_HEADER = struct.Struct("<II")  # dim, m


class FormatError(Exception):
    """A feature / knowledge-base file is malformed."""


@dataclass(frozen=True)
class PartitionConfig:
    """Feature-stratum partition: ``n`` equal index blocks, activation threshold ``t``."""

    n: int = 8
    t: float = 1e-3

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise ValueError(f"stratum count must be a positive integer, got {self.n!r}")
        if not np.isfinite(self.t) or self.t < 0.0:
            raise ValueError(f"activation threshold must be finite and >= 0, got {self.t!r}")

    def validate_dim(self, dim: int) -> None:
        if dim % self.n != 0:
            raise ValueError(
                f"stratum count {self.n} does not divide feature dimension {dim}"
            )


@dataclass(frozen=True)
class KnowledgeBase:
    """Per-class feature means plus the pre-trained linear classifier."""

    class_means: np.ndarray  # (m, dim)
    pre_weights: np.ndarray  # (m, dim)
    pre_bias: np.ndarray  # (m,)

    def __post_init__(self):
        means = as_matrix(self.class_means)
        m, dim = means.shape
        if m < 1:
            raise ValueError("knowledge base needs at least one class")
        weights = as_matrix(self.pre_weights, rows=m, cols=dim)
        bias = as_vector(self.pre_bias, size=m)
        object.__setattr__(self, "class_means", means)
        object.__setattr__(self, "pre_weights", weights)
        object.__setattr__(self, "pre_bias", bias)

    @property
    def m(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]


@dataclass(frozen=True)
class FeatureDataset:
    """Labeled feature vectors; labels are 0-based and contiguous."""

    features: np.ndarray  # (n_samples, dim)
    labels: np.ndarray  # (n_samples,) int64
    n_classes: int

    def __post_init__(self):
        feats = as_matrix(self.features)
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size != feats.shape[0]:
            raise ValueError("labels must be a 1-D array aligned with features")
        if self.n_classes < 1:
            raise ValueError("dataset needs at least one class")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(
                f"labels must lie in [0, {self.n_classes - 1}], "
                f"found range [{labels.min()}, {labels.max()}]"
            )
        present = np.unique(labels)
        if present.size != self.n_classes:
            missing = sorted(set(range(self.n_classes)) - set(present.tolist()))
            raise ValueError(f"every class must be non-empty; missing classes {missing}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_indices(self, label: int) -> np.ndarray:
        if not 0 <= label < self.n_classes:
            raise ValueError(f"class {label} out of range [0, {self.n_classes - 1}]")
        return np.flatnonzero(self.labels == label)

    def vectors_of(self, label: int) -> np.ndarray:
        return self.features[self.class_indices(label)]


def feature_partition(dim: int, n: int) -> list[np.ndarray]:
    """Split 0..dim-1 into n consecutive equal-size index blocks."""
    if dim < 1:
        raise ValueError(f"feature dimension must be positive, got {dim}")
    if n < 1:
        raise ValueError(f"stratum count must be positive, got {n}")
    if dim % n != 0:
        raise ValueError(f"stratum count {n} does not divide feature dimension {dim}")
    width = dim // n
    return [np.arange(i * width, (i + 1) * width) for i in range(n)]


def active_index_set(x, t: float) -> np.ndarray:
    """Indices k with |x_k| > t, ascending."""
    v = as_vector(x)
    if t < 0.0:
        raise ValueError(f"activation threshold must be >= 0, got {t}")
    return np.flatnonzero(np.abs(v) > t)


def pretrain_probs(kb: KnowledgeBase, x) -> np.ndarray:
    """Pre-trained classifier posterior softmax(W x + b) over the m base classes."""
    v = as_vector(x, size=kb.dim)
    return softmax(kb.pre_weights @ v + kb.pre_bias)


def pretrain_logits(kb: KnowledgeBase, x) -> np.ndarray:
    v = as_vector(x, size=kb.dim)
    return kb.pre_weights @ v + kb.pre_bias


# --- binary feature files ---------------------------------------------------


def save_features(ds: FeatureDataset, path) -> None:
    """Write a dataset as magic/header plus per-sample (u32 label, dim x f32) records."""
    rec = np.dtype([("label", "<u4"), ("feat", "<f4", (ds.dim,))])
    out = np.empty(ds.n_samples, dtype=rec)
    out["label"] = ds.labels.astype(np.uint32)
    out["feat"] = ds.features.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(_FEATURE_HEADER.pack(ds.dim, ds.n_classes, ds.n_samples))
        fh.write(out.tobytes())


def load_features(path) -> FeatureDataset:
    raw = Path(path).read_bytes()
    name = str(path)
    if len(raw) < 8 or raw[:8] != FEATURE_MAGIC:
        raise FormatError(f"{name}: bad magic at byte 0, expected {FEATURE_MAGIC!r}")
    header_end = 8 + _FEATURE_HEADER.size
    if len(raw) < header_end:
        raise FormatError(f"{name}: truncated header at byte {len(raw)}")
    dim, n_classes, n_samples = _FEATURE_HEADER.unpack_from(raw, 8)
    if dim == 0:
        raise FormatError(f"{name}: zero feature dimension at byte 8")
    if n_classes == 0:
        raise FormatError(f"{name}: zero class count at byte 12")
    rec = np.dtype([("label", "<u4"), ("feat", "<f4", (dim,))])
    expected = header_end + n_samples * rec.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"{name}: expected {expected} bytes for {n_samples} records, "
            f"found {len(raw)} (payload ends at byte {len(raw)})"
        )
    records = np.frombuffer(raw, dtype=rec, count=n_samples, offset=header_end)
    labels = records["label"].astype(np.int64)
    bad = np.flatnonzero(labels >= n_classes)
    if bad.size:
        r = int(bad[0])
        off = header_end + r * rec.itemsize
        raise FormatError(
            f"{name}: label {int(labels[r])} out of range [0, {n_classes - 1}] at byte {off}"
        )
    feats = records["feat"].astype(np.float64)
    nonfinite = np.argwhere(~np.isfinite(feats))
    if nonfinite.size:
        r, k = (int(v) for v in nonfinite[0])
        off = header_end + r * rec.itemsize + 4 + 4 * k
        raise FormatError(f"{name}: non-finite feature value at byte {off}")
    try:
        return FeatureDataset(feats, labels, int(n_classes))
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from exc


# --- binary knowledge-base files --------------------------------------------


def save_kb(kb: KnowledgeBase, path) -> None:
    with open(path, "wb") as fh:
        fh.write(KB_MAGIC)
        fh.write(_KB_HEADER.pack(kb.dim, kb.m))
        fh.write(kb.class_means.astype("<f4").tobytes())
        fh.write(kb.pre_weights.astype("<f4").tobytes())
        fh.write(kb.pre_bias.astype("<f4").tobytes())


def load_kb(path) -> KnowledgeBase:
    raw = Path(path).read_bytes()
    name = str(path)
    if len(raw) < 8 or raw[:8] != KB_MAGIC:
        raise FormatError(f"{name}: bad magic at byte 0, expected {KB_MAGIC!r}")
    header_end = 8 + _KB_HEADER.size
    if len(raw) < header_end:
        raise FormatError(f"{name}: truncated header at byte {len(raw)}")
    dim, m = _KB_HEADER.unpack_from(raw, 8)
    if dim == 0:
        raise FormatError(f"{name}: zero feature dimension at byte 8")
    if m == 0:
        raise FormatError(f"{name}: zero class count at byte 12")
    expected = header_end + 4 * (2 * m * dim + m)
    if len(raw) != expected:
        raise FormatError(
            f"{name}: expected {expected} bytes for dim={dim} m={m}, "
            f"found {len(raw)} (payload ends at byte {len(raw)})"
        )
    flat = np.frombuffer(raw, dtype="<f4", count=2 * m * dim + m, offset=header_end)
    nonfinite = np.flatnonzero(~np.isfinite(flat))
    if nonfinite.size:
        off = header_end + 4 * int(nonfinite[0])
        raise FormatError(f"{name}: non-finite value at byte {off}")
    means = flat[: m * dim].astype(np.float64).reshape(m, dim)
    weights = flat[m * dim : 2 * m * dim].astype(np.float64).reshape(m, dim)
    bias = flat[2 * m * dim :].astype(np.float64)
    return KnowledgeBase(means, weights, bias)


# --- CSV feature files (hand-written fixtures) -------------------------------


def csv_header(dim: int) -> list[str]:
    return ["label"] + [f"f{i}" for i in range(dim)]


def save_features_csv(ds: FeatureDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_header(ds.dim))
        for label, row in zip(ds.labels, ds.features):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def load_features_csv(path) -> FeatureDataset:
    name = str(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{name}: empty file, missing header at line 1") from None
        dim = len(header) - 1
        if dim < 1 or header != csv_header(dim):
            raise FormatError(
                f"{name}: header at line 1 must be 'label,f0,...,f{{dim-1}}', got {header!r}"
            )
        labels: list[int] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise FormatError(
                    f"{name}: expected {dim + 1} fields at line {lineno}, got {len(row)}"
                )
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise FormatError(f"{name}: unparseable value at line {lineno}: {exc}") from exc
            if label < 0:
                raise FormatError(f"{name}: negative label at line {lineno}")
            if not all(np.isfinite(values)):
                raise FormatError(f"{name}: non-finite feature value at line {lineno}")
            labels.append(label)
            rows.append(values)
    if not rows:
        raise FormatError(f"{name}: no data rows after the header")
    n_classes = max(labels) + 1
    try:
        return FeatureDataset(np.array(rows), np.array(labels), n_classes)
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from exc
