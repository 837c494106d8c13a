"""Backdoor-adjusted prediction over feature and class strata.

Strategies
----------
``none``      one head on the raw feature.
``feature``   the feature indices are split into n equal blocks; head i sees
              block i masked to its active entries, and the per-head softmax
              outputs are averaged under a uniform stratum prior.
``class``     one head on x concatenated with the probability-weighted mean of
              the pre-trained class means (the sum moved inside the head via
              the normalized weighted geometric mean).
``combined``  the feature-wise split applied on top of the class-wise context:
              head i sees block i of x joined with block i of the context.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .heads import HeadParams, logits_batch
from .knowledge import KnowledgeBase, PartitionConfig, active_index_set, feature_partition, pretrain_probs
from .numerics import as_vector, softmax, softmax_rows

STRATEGIES = ("none", "feature", "class", "combined")


@dataclass(frozen=True)
class AdjustmentConfig:
    strategy: str = "none"
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    prior: str = "uniform"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if self.prior != "uniform":
            raise ValueError(f"only the uniform stratum prior is supported, got {self.prior!r}")


def select(x, indices, block) -> np.ndarray:
    """Masked slice: block-shaped copy of x with entries outside ``indices`` zeroed.

    ``indices`` must be a subset of ``block``; the result has one entry per
    block position so head input dimensions stay fixed.
    """
    v = as_vector(x)
    block = np.asarray(block, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    if block.size and (block.min() < 0 or block.max() >= v.size):
        raise ValueError("block indices out of range")
    if indices.size:
        if not np.isin(indices, block).all():
            raise ValueError("selected indices must be a subset of the block")
    out = np.zeros(block.size)
    if indices.size:
        pos = np.searchsorted(block, indices)
        out[pos] = v[indices]
    return out


def feature_contexts(x, part: PartitionConfig) -> list[np.ndarray]:
    """Per-stratum index sets c_i: block i intersected with the active set of x."""
    v = as_vector(x)
    part.validate_dim(v.size)
    active = np.abs(v) > part.t
    blocks = feature_partition(v.size, part.n)
    return [block[active[block]] for block in blocks]


def class_context(kb: KnowledgeBase, x) -> np.ndarray:
    """Probability-weighted mean context (1/m) sum_j P(a_j | x) * mean_j."""
    probs = pretrain_probs(kb, x)
    return (probs @ kb.class_means) / kb.m


class Predictor:
    """Adjusted inputs and probability mixing for one (strategy, head kind) pairing."""

    def __init__(
        self,
        cfg: AdjustmentConfig,
        kb: KnowledgeBase | None,
        dim: int,
        way: int,
        head_kind: str,
    ):
        if way < 2:
            raise ValueError(f"need at least 2 classes, got {way}")
        if dim < 1:
            raise ValueError(f"feature dimension must be positive, got {dim}")
        if cfg.strategy in ("class", "combined") and kb is None:
            raise ValueError(f"strategy {cfg.strategy!r} requires a knowledge base")
        if kb is not None and kb.dim != dim:
            raise ValueError(f"knowledge base dimension {kb.dim} does not match features ({dim})")
        if cfg.strategy in ("feature", "combined"):
            cfg.partition.validate_dim(dim)
        self.cfg = cfg
        self.kb = kb
        self.dim = dim
        self.way = way
        self.head_kind = head_kind
        if cfg.strategy == "none":
            self.n_heads, self.head_input_dim = 1, dim
        elif cfg.strategy == "feature":
            self.n_heads, self.head_input_dim = cfg.partition.n, dim // cfg.partition.n
        elif cfg.strategy == "class":
            self.n_heads, self.head_input_dim = 1, 2 * dim
        else:
            self.n_heads, self.head_input_dim = cfg.partition.n, 2 * dim // cfg.partition.n

    def context_inputs(self, x) -> list[np.ndarray]:
        """Per-head input vectors for one raw feature vector."""
        v = as_vector(x, size=self.dim)
        strategy = self.cfg.strategy
        if strategy == "none":
            return [v]
        if strategy == "class":
            return [np.concatenate([v, class_context(self.kb, v)])]
        blocks = feature_partition(self.dim, self.cfg.partition.n)
        x_ctx = feature_contexts(v, self.cfg.partition)
        if strategy == "feature":
            return [select(v, c, blk) for c, blk in zip(x_ctx, blocks)]
        ctx = class_context(self.kb, v)
        c_ctx = feature_contexts(ctx, self.cfg.partition)
        return [
            np.concatenate([select(v, cx, blk), select(ctx, cc, blk)])
            for cx, cc, blk in zip(x_ctx, c_ctx, blocks)
        ]

    def support_inputs(self, X: np.ndarray) -> list[np.ndarray]:
        """Stacked per-head input blocks for a (S, dim) feature matrix."""
        per_sample = [self.context_inputs(row) for row in np.asarray(X, dtype=np.float64)]
        return [
            np.stack([sample[i] for sample in per_sample])
            for i in range(self.n_heads)
        ]

    def validate_heads(self, heads: Sequence[HeadParams]) -> None:
        if len(heads) != self.n_heads:
            raise ValueError(f"expected {self.n_heads} heads, got {len(heads)}")
        for h in heads:
            if h.kind != self.head_kind:
                raise ValueError(f"expected {self.head_kind!r} heads, got {h.kind!r}")
            if h.way != self.way:
                raise ValueError(f"head is {h.way}-way, expected {self.way}")
            if h.input_dim != self.head_input_dim:
                raise ValueError(
                    f"head input dimension {h.input_dim} does not match "
                    f"strategy requirement {self.head_input_dim}"
                )

    def probs_from_inputs(self, heads: Sequence[HeadParams], blocks: Sequence[np.ndarray]) -> np.ndarray:
        """(B, K) mixture probabilities from precomputed per-head input blocks."""
        acc = None
        # Fixed ascending-stratum summation keeps parallel evaluation reproducible.
        for h, Z in zip(heads, blocks):
            p = softmax_rows(logits_batch(h, Z))
            acc = p if acc is None else acc + p
        return acc / len(heads)

    def probs(self, heads: Sequence[HeadParams], x) -> np.ndarray:
        self.validate_heads(heads)
        blocks = [z[None, :] for z in self.context_inputs(x)]
        return self.probs_from_inputs(heads, blocks)[0]

    def probs_batch(self, heads: Sequence[HeadParams], X: np.ndarray) -> np.ndarray:
        self.validate_heads(heads)
        return self.probs_from_inputs(heads, self.support_inputs(X))


def _normalize_heads(heads) -> list[HeadParams]:
    if isinstance(heads, HeadParams):
        return [heads]
    out = list(heads)
    if not out:
        raise ValueError("no heads given")
    return out


def predict(heads, x, kb: KnowledgeBase | None, cfg: AdjustmentConfig) -> np.ndarray:
    """Adjusted class probabilities for one feature vector.

    ``heads`` is a single head for the ``none``/``class`` strategies or one
    head per feature stratum otherwise; kind and way are read off the heads.
    """
    hs = _normalize_heads(heads)
    v = as_vector(x)
    predictor = Predictor(cfg, kb, v.size, hs[0].way, hs[0].kind)
    return predictor.probs(hs, v)


def backdoor_exact_classwise(head: HeadParams, x, kb: KnowledgeBase) -> np.ndarray:
    """Explicit class-stratum backdoor sum sum_d softmax(f(x + c_d)) P(d).

    Stratum d contributes the concatenation of x with c_d = P(a_d | x) * mean_d
    under the uniform prior P(d) = 1/m. The NWGM form used by ``predict`` moves
    the sum inside the head; for linear heads the two agree exactly.
    """
    v = as_vector(x, size=kb.dim)
    if head.input_dim != 2 * kb.dim:
        raise ValueError(
            f"head input dimension {head.input_dim} does not match concatenated size {2 * kb.dim}"
        )
    probs = pretrain_probs(kb, v)
    acc = np.zeros(head.way)
    for d in range(kb.m):
        z = np.concatenate([v, probs[d] * kb.class_means[d]])
        acc += softmax_rows(logits_batch(head, z[None, :]))[0]
    return acc / kb.m


def nwgm(logit_sets, priors) -> np.ndarray:
    """Normalized weighted geometric mean of per-stratum softmax distributions.

    Computed literally as prod_d exp(f_d)^{P(d)} renormalized over classes,
    which equals softmax(sum_d P(d) f_d). A per-stratum shift keeps the
    exponentials bounded without changing the normalized result.
    """
    mats = [as_vector(f) for f in logit_sets]
    w = as_vector(priors, size=len(mats))
    if not mats:
        raise ValueError("need at least one stratum")
    if w.min() < 0.0 or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("priors must be non-negative and sum to 1")
    K = mats[0].size
    out = np.ones(K)
    for f, p in zip(mats, w):
        if f.size != K:
            raise ValueError("all strata must score the same classes")
        out = out * np.exp(f - f.max()) ** p
    return out / out.sum()
