"""Few-shot episode sampling and evaluation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .adjust import AdjustmentConfig, Predictor
from .heads import FitConfig, HeadParams, fit_head, init_heads
from .knowledge import FeatureDataset, KnowledgeBase, pretrain_logits
from .evalmetrics import query_hardness
from .numerics import as_matrix


@dataclass(frozen=True)
class Episode:
    """One K-way N-shot task with Q queries per class.

    Episode labels run 0..way-1; ``class_map`` maps them back to dataset class
    ids. ``support_idx``/``query_idx`` record the originating sample rows so
    disjointness stays auditable.
    """

    way: int
    shot: int
    query_per_class: int
    support_x: np.ndarray  # (way*shot, dim)
    support_y: np.ndarray  # (way*shot,)
    query_x: np.ndarray  # (way*query_per_class, dim)
    query_y: np.ndarray  # (way*query_per_class,)
    class_map: np.ndarray  # (way,) dataset class ids
    support_idx: np.ndarray
    query_idx: np.ndarray

    def __post_init__(self):
        if self.way < 2:
            raise ValueError(f"episodes need at least 2 classes, got way={self.way}")
        if self.shot < 1 or self.query_per_class < 1:
            raise ValueError("shot and query_per_class must be >= 1")
        sx = as_matrix(self.support_x, rows=self.way * self.shot)
        qx = as_matrix(self.query_x, rows=self.way * self.query_per_class, cols=sx.shape[1])
        sy = np.asarray(self.support_y, dtype=np.int64)
        qy = np.asarray(self.query_y, dtype=np.int64)
        for name, arr, expect in (
            ("support_y", sy, sx.shape[0]),
            ("query_y", qy, qx.shape[0]),
        ):
            if arr.shape != (expect,):
                raise ValueError(f"{name} must have shape ({expect},)")
            if arr.min() < 0 or arr.max() >= self.way:
                raise ValueError(f"{name} entries must lie in [0, {self.way - 1}]")
        si = np.asarray(self.support_idx, dtype=np.int64)
        qi = np.asarray(self.query_idx, dtype=np.int64)
        if np.intersect1d(si, qi).size:
            raise ValueError("support and query must use disjoint sample indices")
        cm = np.asarray(self.class_map, dtype=np.int64)
        if cm.shape != (self.way,) or np.unique(cm).size != self.way:
            raise ValueError("class_map must name one distinct dataset class per episode label")
        for name, arr in (
            ("support_x", sx), ("query_x", qx), ("support_y", sy),
            ("query_y", qy), ("support_idx", si), ("query_idx", qi), ("class_map", cm),
        ):
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.support_x.shape[1]


@dataclass(frozen=True)
class EpisodeResult:
    """Per-query outcomes of one evaluated episode."""

    predicted: np.ndarray
    true: np.ndarray
    hardness: np.ndarray
    correct: np.ndarray

    @property
    def accuracy(self) -> float:
        return float(self.correct.mean())


def sample_episode(ds: FeatureDataset, way: int, shot: int, query: int, rng: np.random.Generator) -> Episode:
    """Draw a K-way episode: classes without replacement, then disjoint support/query rows.

    Episode labels follow ascending dataset class id.
    """
    if way < 2:
        raise ValueError(f"episodes need at least 2 classes, got way={way}")
    if shot < 1 or query < 1:
        raise ValueError("shot and query counts must be >= 1")
    if ds.n_classes < way:
        raise ValueError(
            f"dataset has {ds.n_classes} classes but the episode needs {way}"
        )
    chosen = np.sort(rng.choice(ds.n_classes, size=way, replace=False))
    support_rows, query_rows = [], []
    for cls in chosen:
        pool = ds.class_indices(int(cls))
        need = shot + query
        if pool.size < need:
            raise ValueError(
                f"class {int(cls)} has {pool.size} samples, episode needs {need}"
            )
        picked = rng.choice(pool, size=need, replace=False)
        support_rows.append(picked[:shot])
        query_rows.append(picked[shot:])
    si = np.concatenate(support_rows)
    qi = np.concatenate(query_rows)
    return Episode(
        way=way,
        shot=shot,
        query_per_class=query,
        support_x=ds.features[si],
        support_y=np.repeat(np.arange(way), shot),
        query_x=ds.features[qi],
        query_y=np.repeat(np.arange(way), query),
        class_map=chosen,
        support_idx=si,
        query_idx=qi,
    )


def episode_hardness(ep: Episode, kb: KnowledgeBase) -> np.ndarray:
    """Hardness of every query: disagreement between its pre-trained response
    and the averaged pre-trained responses of its class's support samples."""
    support_logits = np.stack([pretrain_logits(kb, row) for row in ep.support_x])
    class_profiles = [
        support_logits[ep.support_y == k].mean(axis=0) for k in range(ep.way)
    ]
    return np.array([
        query_hardness(pretrain_logits(kb, row), class_profiles, int(gt))
        for row, gt in zip(ep.query_x, ep.query_y)
    ])


def run_episode(
    ep: Episode,
    classifier: str,
    adj_cfg: AdjustmentConfig,
    fit_cfg: FitConfig,
    kb: KnowledgeBase,
) -> EpisodeResult:
    """Fit (if parametric) and evaluate one episode; deterministic given configs."""
    if kb.dim != ep.dim:
        raise ValueError(f"knowledge base dimension {kb.dim} does not match episode ({ep.dim})")
    predictor = Predictor(adj_cfg, kb, ep.dim, ep.way, classifier)
    if classifier == "centroid":
        heads = init_heads(
            "centroid", ep.way, predictor.support_inputs(ep.support_x), ep.support_y
        )
    else:
        heads = fit_head(ep.support_x, ep.support_y, predictor, fit_cfg)
    probs = predictor.probs_batch(heads, ep.query_x)
    predicted = probs.argmax(axis=1)
    hardness = episode_hardness(ep, kb)
    return EpisodeResult(
        predicted=predicted,
        true=ep.query_y.copy(),
        hardness=hardness,
        correct=predicted == ep.query_y,
    )


def episode_rng(seed: int, index: int) -> np.random.Generator:
    """Stream for episode ``index``: independent of every other index, so a
    parallel run equals the serial one."""
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def derived_fit_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence((seed, index, 1)).generate_state(1, np.uint64)[0])


def parallel_indexed(fn, count: int, threads: int = 1) -> list:
    """Apply ``fn`` to 0..count-1, optionally on a thread pool, keeping index order."""
    if threads <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def run_many(
    ds: FeatureDataset,
    way: int,
    shot: int,
    query: int,
    count: int,
    classifier: str,
    adj_cfg: AdjustmentConfig,
    fit_cfg: FitConfig,
    kb: KnowledgeBase,
    seed: int,
    threads: int = 1,
) -> list[EpisodeResult]:
    """Sample and evaluate ``count`` episodes under per-index seed streams."""
    if count < 1:
        raise ValueError(f"episode count must be >= 1, got {count}")

    def one(index: int) -> EpisodeResult:
        ep = sample_episode(ds, way, shot, query, episode_rng(seed, index))
        cfg = replace(fit_cfg, seed=derived_fit_seed(seed, index))
        return run_episode(ep, classifier, adj_cfg, cfg, kb)

    return parallel_indexed(one, count, threads)
