"""Synthetic confounded feature generators and a linear-SCM instrument demo.

The classification generator plants one unit direction per class and per
confounder stratum: a sample of class y in stratum d is mu_y + beta * v_d
plus isotropic noise. Pre-training classes mix strata through Dirichlet(0.5)
weights so the pre-trained classifier partially entangles class and stratum;
novel classes carry explicit per-sample stratum tags so episodes can tie each
support class to a single stratum while queries escape with some probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adjust import AdjustmentConfig, Predictor
from .episodes import (
    Episode,
    EpisodeResult,
    derived_fit_seed,
    episode_rng,
    parallel_indexed,
    run_episode,
)
from .heads import FitConfig, fit_head
from .knowledge import FeatureDataset, KnowledgeBase

_KB_FIT = FitConfig(iterations=500, batch_size=None, learning_rate=0.1, weight_decay=1e-4, seed=0)


@dataclass(frozen=True)
class SynthConfig:
    dim: int = 64
    pretrain_classes: int = 16
    novel_classes: int = 16
    strata: int = 4
    beta: float = 2.0
    sigma: float = 0.5
    samples_per_class: int = 500
    mismatch_rate: float = 0.5
    seed: int = 42

    def __post_init__(self):
        if self.dim < 1 or self.pretrain_classes < 1 or self.novel_classes < 2:
            raise ValueError("dim and class counts must be positive (>= 2 novel classes)")
        if self.strata < 2:
            raise ValueError(f"need at least 2 confounder strata, got {self.strata}")
        if self.samples_per_class < self.strata:
            raise ValueError("need at least one sample per stratum per class")
        if not 0.0 <= self.mismatch_rate <= 1.0:
            raise ValueError(f"mismatch rate must lie in [0, 1], got {self.mismatch_rate}")
        if self.beta < 0.0 or self.sigma < 0.0:
            raise ValueError("beta and sigma must be >= 0")


@dataclass(frozen=True)
class SynthOutput:
    pretrain: FeatureDataset
    kb: KnowledgeBase
    novel: FeatureDataset
    novel_strata: np.ndarray  # (novel samples,) stratum tags
    class_dirs: np.ndarray  # (pretrain+novel classes, dim) unit rows
    conf_dirs: np.ndarray  # (strata, dim) unit rows
    mixtures: np.ndarray  # (pretrain classes, strata)


def _unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    m = rng.standard_normal((count, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def gen_confounded(cfg: SynthConfig, rng: np.random.Generator | None = None) -> SynthOutput:
    """Generate pretrain data, a fitted knowledge base, and tagged novel data.

    Deterministic for a fixed config seed: equal seeds give byte-identical
    datasets after serialization.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    total_classes = cfg.pretrain_classes + cfg.novel_classes
    class_dirs = _unit_rows(rng, total_classes, cfg.dim)
    conf_dirs = _unit_rows(rng, cfg.strata, cfg.dim)
    mixtures = rng.dirichlet(np.full(cfg.strata, 0.5), size=cfg.pretrain_classes)

    per = cfg.samples_per_class
    pre_feats = np.empty((cfg.pretrain_classes * per, cfg.dim))
    pre_labels = np.repeat(np.arange(cfg.pretrain_classes), per)
    for j in range(cfg.pretrain_classes):
        strata = rng.choice(cfg.strata, size=per, p=mixtures[j])
        noise = rng.standard_normal((per, cfg.dim))
        pre_feats[j * per : (j + 1) * per] = (
            class_dirs[j] + cfg.beta * conf_dirs[strata] + cfg.sigma * noise
        )
    pretrain = FeatureDataset(pre_feats, pre_labels, cfg.pretrain_classes)

    # novel classes: deterministic round-robin tags keep every (class, stratum)
    # cell equally filled for confounded episode sampling
    tags = np.arange(per) % cfg.strata
    nov_feats = np.empty((cfg.novel_classes * per, cfg.dim))
    nov_labels = np.repeat(np.arange(cfg.novel_classes), per)
    for j in range(cfg.novel_classes):
        noise = rng.standard_normal((per, cfg.dim))
        nov_feats[j * per : (j + 1) * per] = (
            class_dirs[cfg.pretrain_classes + j] + cfg.beta * conf_dirs[tags] + cfg.sigma * noise
        )
    novel = FeatureDataset(nov_feats, nov_labels, cfg.novel_classes)
    novel_strata = np.tile(tags, cfg.novel_classes)

    kb = fit_kb(pretrain)
    return SynthOutput(pretrain, kb, novel, novel_strata, class_dirs, conf_dirs, mixtures)


def fit_kb(pretrain: FeatureDataset) -> KnowledgeBase:
    """Knowledge base from pretrain data: empirical class means plus a linear
    classifier fitted full-batch (500 steps, lr 0.1, weight decay 1e-4)."""
    means = np.stack([pretrain.vectors_of(c).mean(axis=0) for c in range(pretrain.n_classes)])
    predictor = Predictor(
        AdjustmentConfig("none"), None, pretrain.dim, pretrain.n_classes, "linear"
    )
    head = fit_head(pretrain.features, pretrain.labels, predictor, _KB_FIT)[0]
    return KnowledgeBase(means, head.W, head.b)


def sample_confounded_episode(
    novel: FeatureDataset,
    strata_tags: np.ndarray,
    way: int,
    shot: int,
    query: int,
    mismatch_rate: float,
    rng: np.random.Generator,
) -> tuple[Episode, np.ndarray]:
    """Episode whose support classes are each tied to one stratum.

    Every support sample of a class comes from that class's assigned stratum;
    each query keeps the class stratum with probability 1 - mismatch_rate and
    otherwise lands in a uniformly chosen different stratum. Returns the
    episode plus a boolean mask marking mismatched queries.
    """
    tags = np.asarray(strata_tags, dtype=np.int64)
    if tags.shape != (novel.n_samples,):
        raise ValueError("stratum tags must align with the dataset samples")
    n_strata = int(tags.max()) + 1
    if n_strata < 2:
        raise ValueError("need at least 2 strata to mismatch queries")
    if not 0.0 <= mismatch_rate <= 1.0:
        raise ValueError(f"mismatch rate must lie in [0, 1], got {mismatch_rate}")
    if way < 2:
        raise ValueError(f"episodes need at least 2 classes, got way={way}")
    if novel.n_classes < way:
        raise ValueError(f"dataset has {novel.n_classes} classes but the episode needs {way}")

    chosen = np.sort(rng.choice(novel.n_classes, size=way, replace=False))
    # spread assigned strata over a fresh permutation so collisions only occur
    # when the episode has more classes than strata
    perm = rng.permutation(n_strata)
    assigned = np.array([perm[k % n_strata] for k in range(way)])

    mismatch = rng.random(way * query) < mismatch_rate
    query_strata = np.repeat(assigned, query)
    for i in np.flatnonzero(mismatch):
        others = np.delete(np.arange(n_strata), query_strata[i])
        query_strata[i] = rng.choice(others)

    support_rows, query_rows = [], []
    for k, cls in enumerate(chosen):
        cls_rows = np.flatnonzero(novel.labels == cls)
        needed = {int(assigned[k]): shot}
        qs = query_strata[k * query : (k + 1) * query]
        for s in qs:
            needed[int(s)] = needed.get(int(s), 0) + 1
        picked: dict[int, list[int]] = {}
        for s, need in sorted(needed.items()):
            cell = cls_rows[tags[cls_rows] == s]
            if cell.size < need:
                raise ValueError(
                    f"class {int(cls)} stratum {s} holds {cell.size} samples, "
                    f"episode needs {need}"
                )
            drawn = rng.choice(cell, size=need, replace=False)
            picked[s] = list(drawn)
        support_rows.extend(picked[int(assigned[k])][:shot])
        cursor = {s: (shot if s == int(assigned[k]) else 0) for s in picked}
        for s in qs:
            query_rows.append(picked[int(s)][cursor[int(s)]])
            cursor[int(s)] += 1

    si = np.array(support_rows, dtype=np.int64)
    qi = np.array(query_rows, dtype=np.int64)
    ep = Episode(
        way=way,
        shot=shot,
        query_per_class=query,
        support_x=novel.features[si],
        support_y=np.repeat(np.arange(way), shot),
        query_x=novel.features[qi],
        query_y=np.repeat(np.arange(way), query),
        class_map=chosen,
        support_idx=si,
        query_idx=qi,
    )
    return ep, mismatch


def run_confounded(
    novel: FeatureDataset,
    strata_tags: np.ndarray,
    kb: KnowledgeBase,
    way: int,
    shot: int,
    query: int,
    count: int,
    mismatch_rate: float,
    classifier: str,
    adj_cfg: AdjustmentConfig,
    fit_cfg: FitConfig,
    seed: int,
    threads: int = 1,
) -> tuple[list[EpisodeResult], list[np.ndarray]]:
    """Evaluate ``count`` confounded episodes; per-index streams keep parallel
    runs equal to serial ones. Also returns each episode's mismatch mask."""
    if count < 1:
        raise ValueError(f"episode count must be >= 1, got {count}")

    def one(index: int):
        rng = episode_rng(seed, index)
        ep, mismatch = sample_confounded_episode(
            novel, strata_tags, way, shot, query, mismatch_rate, rng
        )
        cfg = FitConfig(
            fit_cfg.iterations,
            fit_cfg.batch_size,
            fit_cfg.learning_rate,
            fit_cfg.weight_decay,
            derived_fit_seed(seed, index),
        )
        return run_episode(ep, classifier, adj_cfg, cfg, kb), mismatch

    pairs = parallel_indexed(one, count, threads)
    return [p[0] for p in pairs], [p[1] for p in pairs]


# --- linear-SCM instrument demo ----------------------------------------------


@dataclass(frozen=True)
class LinearScmConfig:
    """X = a*I + b*D + e1, Y = c*X + e*D + e2 with I, D standard normal and
    e1, e2 zero-mean gaussians scaled by the noise fields."""

    instrument_coef: float = 1.0  # a
    confounder_to_x: float = 2.0  # b
    causal_effect: float = 3.0  # c
    confounder_to_y: float = 5.0  # e
    noise_x: float = 1.0
    noise_y: float = 1.0
    samples: int = 100_000

    def __post_init__(self):
        if self.samples < 3:
            raise ValueError("need at least 3 samples")
        if self.noise_x < 0.0 or self.noise_y < 0.0:
            raise ValueError("noise scales must be >= 0")


@dataclass(frozen=True)
class IvResult:
    ols_slope: float
    iv_estimate: float
    true_effect: float


def _cov(a: np.ndarray, b: np.ndarray) -> float:
    return float(((a - a.mean()) * (b - b.mean())).mean())


def iv_demo(cfg: LinearScmConfig, rng: np.random.Generator) -> IvResult:
    """Simulate the SCM and contrast the confounded OLS slope with the
    instrument ratio Cov(I,Y)/Cov(I,X), which recovers the causal effect."""
    instrument = rng.standard_normal(cfg.samples)
    confounder = rng.standard_normal(cfg.samples)
    x = (
        cfg.instrument_coef * instrument
        + cfg.confounder_to_x * confounder
        + cfg.noise_x * rng.standard_normal(cfg.samples)
    )
    y = (
        cfg.causal_effect * x
        + cfg.confounder_to_y * confounder
        + cfg.noise_y * rng.standard_normal(cfg.samples)
    )
    cov_ix = _cov(instrument, x)
    if abs(cov_ix) < 1e-9:
        raise ValueError("degenerate instrument: Cov(I, X) is numerically zero")
    return IvResult(
        ols_slope=_cov(x, y) / _cov(x, x),
        iv_estimate=_cov(instrument, y) / cov_ix,
        true_effect=cfg.causal_effect,
    )
