"""Shared float64 vector/matrix kernels."""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_vector",
    "as_matrix",
    "softmax",
    "softmax_rows",
    "cosine_similarity",
    "relu",
    "mean_vector",
]


def as_vector(values, size: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if size is not None and v.size != size:
        raise ValueError(f"expected a vector of length {size}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    return v


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a finite 2-D float64 array, optionally checking its shape."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"expected {cols} columns, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def softmax(logits) -> np.ndarray:
    """Stable softmax of a logit vector (max-subtracted before exponentiation)."""
    z = as_vector(logits)
    if z.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a (B, K) logit matrix. No input validation."""
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors; 0.0 if either has zero norm."""
    va = as_vector(a)
    vb = as_vector(b, size=va.size)
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(va @ vb / (na * nb))


def relu(v) -> np.ndarray:
    return np.maximum(as_vector(v), 0.0)


def mean_vector(vectors) -> np.ndarray:
    """Arithmetic mean of a non-empty sequence of equal-length vectors."""
    vs = list(vectors)
    if not vs:
        raise ValueError("mean of an empty collection of vectors")
    first = as_vector(vs[0])
    stacked = np.stack([as_vector(v, size=first.size) for v in vs])
    return stacked.mean(axis=0)
