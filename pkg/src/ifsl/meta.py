"""First-order meta-learning of head initializations.

The inner loop adapts a copy of the shared initialization with full-batch
gradient steps on each task's support set; the outer loop applies the query
loss gradient, taken at the adapted parameters, directly to the
initialization (no second-order terms).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .adjust import AdjustmentConfig, Predictor
from .episodes import sample_episode
from .heads import HeadParams, mixture_loss_and_grads
from .knowledge import FeatureDataset, KnowledgeBase

META_MAGIC = b"IFSLMET1"
_KIND_CODES = {"linear": 0, "cosine": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


@dataclass
class MetaInit:
    """Shared head initialization plus the meta-training hyperparameters."""

    theta0: list[HeadParams]
    inner_lr: float = 0.01
    inner_steps: int = 20
    outer_lr: float = 0.01
    tasks: int = 1000

    def __post_init__(self):
        if not self.theta0:
            raise ValueError("need at least one head")
        kinds = {h.kind for h in self.theta0}
        if len(kinds) != 1 or next(iter(kinds)) not in _KIND_CODES:
            raise ValueError("meta initialization needs parametric heads of one kind")
        if self.inner_lr <= 0.0 or self.outer_lr < 0.0:
            raise ValueError("learning rates must be positive (outer may be 0)")
        if self.inner_steps < 0 or self.tasks < 0:
            raise ValueError("step and task counts must be >= 0")

    def copy_theta(self) -> list[HeadParams]:
        return [h.copy() for h in self.theta0]


def zero_meta_init(
    way: int,
    input_dim: int,
    n_heads: int = 1,
    inner_lr: float = 0.01,
    inner_steps: int = 20,
    outer_lr: float = 0.01,
    tasks: int = 1000,
) -> MetaInit:
    heads = [
        HeadParams("linear", W=np.zeros((way, input_dim)), b=np.zeros(way))
        for _ in range(n_heads)
    ]
    return MetaInit(heads, inner_lr, inner_steps, outer_lr, tasks)


def adapt(
    theta: Sequence[HeadParams],
    predictor: Predictor,
    support_x: np.ndarray,
    support_y: np.ndarray,
    inner_lr: float,
    inner_steps: int,
) -> list[HeadParams]:
    """Full-batch inner-loop adaptation of a copy of ``theta``.

    Matches ``fit_head`` with ``batch_size=None`` and zero weight decay.
    """
    predictor.validate_heads(theta)
    heads = [h.copy() for h in theta]
    blocks = predictor.support_inputs(np.asarray(support_x, dtype=np.float64))
    y = np.asarray(support_y, dtype=np.int64)
    for _ in range(inner_steps):
        _, grads = mixture_loss_and_grads(heads, blocks, y, 0.0)
        for h, g in zip(heads, grads):
            h.W -= inner_lr * g.W
            if g.b is not None:
                h.b -= inner_lr * g.b
    return heads


def meta_train(
    ds: FeatureDataset,
    way: int,
    shot: int,
    query: int,
    adj_cfg: AdjustmentConfig,
    mi: MetaInit,
    kb: KnowledgeBase | None,
    rng: np.random.Generator,
) -> MetaInit:
    """Run ``mi.tasks`` meta-iterations and return the updated initialization.

    Each task is a fresh episode; the initialization moves by ``outer_lr``
    times the query-loss gradient at the task-adapted parameters. With
    ``outer_lr=0`` the initialization is returned unchanged (aside from a
    copy). Deterministic for a fixed rng state.
    """
    kind = mi.theta0[0].kind
    predictor = Predictor(adj_cfg, kb, ds.dim, way, kind)
    theta = mi.copy_theta()
    predictor.validate_heads(theta)
    for _ in range(mi.tasks):
        ep = sample_episode(ds, way, shot, query, rng)
        adapted = adapt(theta, predictor, ep.support_x, ep.support_y, mi.inner_lr, mi.inner_steps)
        blocks = predictor.support_inputs(ep.query_x)
        _, grads = mixture_loss_and_grads(adapted, blocks, ep.query_y, 0.0)
        for h0, g in zip(theta, grads):
            h0.W -= mi.outer_lr * g.W
            if g.b is not None:
                h0.b -= mi.outer_lr * g.b
    return replace_theta(mi, theta)


def replace_theta(mi: MetaInit, theta: list[HeadParams]) -> MetaInit:
    return MetaInit(theta, mi.inner_lr, mi.inner_steps, mi.outer_lr, mi.tasks)


# --- serialization -----------------------------------------------------------


def save_meta(mi: MetaInit, path) -> None:
    """Binary blob: magic, layout header, then f32 parameter payload per head."""
    kind = mi.theta0[0].kind
    way = mi.theta0[0].way
    dim = mi.theta0[0].input_dim
    with open(path, "wb") as fh:
        fh.write(META_MAGIC)
        fh.write(
            struct.pack(
                "<IIII", _KIND_CODES[kind], len(mi.theta0), way, dim
            )
        )
        fh.write(struct.pack("<ffII", mi.inner_lr, mi.outer_lr, mi.inner_steps, mi.tasks))
        for h in mi.theta0:
            fh.write(h.W.astype("<f4").tobytes())
            if kind == "linear":
                fh.write(h.b.astype("<f4").tobytes())


def load_meta(path):
    from .knowledge import FormatError

    raw = Path(path).read_bytes()
    name = str(path)
    if len(raw) < 8 or raw[:8] != META_MAGIC:
        raise FormatError(f"{name}: bad magic at byte 0, expected {META_MAGIC!r}")
    if len(raw) < 8 + 16 + 16:
        raise FormatError(f"{name}: truncated header at byte {len(raw)}")
    kind_code, n_heads, way, dim = struct.unpack_from("<IIII", raw, 8)
    inner_lr, outer_lr, inner_steps, tasks = struct.unpack_from("<ffII", raw, 24)
    if kind_code not in _KIND_NAMES:
        raise FormatError(f"{name}: unknown head kind code {kind_code} at byte 8")
    if n_heads == 0 or way < 2 or dim == 0:
        raise FormatError(f"{name}: degenerate layout in header at byte 12")
    kind = _KIND_NAMES[kind_code]
    per_head = way * dim + (way if kind == "linear" else 0)
    expected = 40 + 4 * n_heads * per_head
    if len(raw) != expected:
        raise FormatError(
            f"{name}: expected {expected} bytes, found {len(raw)} "
            f"(payload ends at byte {len(raw)})"
        )
    heads = []
    off = 40
    for _ in range(n_heads):
        W = np.frombuffer(raw, dtype="<f4", count=way * dim, offset=off).astype(np.float64)
        off += 4 * way * dim
        if not np.all(np.isfinite(W)):
            raise FormatError(f"{name}: non-finite weight in payload before byte {off}")
        b = None
        if kind == "linear":
            b = np.frombuffer(raw, dtype="<f4", count=way, offset=off).astype(np.float64)
            off += 4 * way
            if not np.all(np.isfinite(b)):
                raise FormatError(f"{name}: non-finite bias in payload before byte {off}")
        heads.append(HeadParams(kind, W=W.reshape(way, dim), b=b))
    return MetaInit(heads, float(inner_lr), int(inner_steps), float(outer_lr), int(tasks))
