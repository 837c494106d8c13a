"""Episode sampling, evaluation, seed streams, and thread-order stability."""

import dataclasses

import numpy as np
import pytest

from ifsl.adjust import AdjustmentConfig
from ifsl.episodes import (
    Episode,
    episode_hardness,
    episode_rng,
    derived_fit_seed,
    parallel_indexed,
    run_episode,
    run_many,
    sample_episode,
)
from ifsl.heads import FitConfig

from conftest import make_blob_dataset, make_kb


@pytest.fixture
def ds():
    return make_blob_dataset(n_classes=8, per_class=25, dim=16, seed=31)


@pytest.fixture
def kb():
    return make_kb(m=4, dim=16, seed=5)


# --- sampling ---------------------------------------------------------------------


def test_sample_episode_shapes(ds):
    ep = sample_episode(ds, way=5, shot=2, query=3, rng=episode_rng(0, 0))
    assert ep.support_x.shape == (10, 16)
    assert ep.query_x.shape == (15, 16)
    assert np.array_equal(ep.support_y, np.repeat(np.arange(5), 2))
    assert np.array_equal(ep.query_y, np.repeat(np.arange(5), 3))
    assert len(set(ep.class_map.tolist())) == 5


def test_sample_episode_deterministic(ds):
    a = sample_episode(ds, 5, 1, 4, episode_rng(9, 3))
    b = sample_episode(ds, 5, 1, 4, episode_rng(9, 3))
    assert np.array_equal(a.support_idx, b.support_idx)
    assert np.array_equal(a.query_idx, b.query_idx)
    assert np.array_equal(a.class_map, b.class_map)
    c = sample_episode(ds, 5, 1, 4, episode_rng(9, 4))
    assert not np.array_equal(a.query_idx, c.query_idx)


def test_sample_episode_support_query_disjoint(ds):
    for i in range(50):
        ep = sample_episode(ds, 4, 3, 3, episode_rng(1, i))
        assert not set(ep.support_idx.tolist()) & set(ep.query_idx.tolist())
        # rows really come from the dataset positions they claim
        assert np.array_equal(ep.support_x, ds.features[ep.support_idx])
        assert np.array_equal(ep.query_x, ds.features[ep.query_idx])


def test_sample_episode_uses_all_classes_when_way_equals_total(ds):
    ep = sample_episode(ds, ds.n_classes, 1, 1, episode_rng(2, 0))
    assert np.array_equal(ep.class_map, np.arange(ds.n_classes))


def test_sample_episode_rejects_small_requests(ds):
    with pytest.raises(ValueError, match="at least 2 classes"):
        sample_episode(ds, 1, 1, 1, episode_rng(0, 0))
    with pytest.raises(ValueError, match="has 8 classes"):
        sample_episode(ds, 9, 1, 1, episode_rng(0, 0))
    with pytest.raises(ValueError, match="episode needs 26"):
        sample_episode(ds, 2, 13, 13, episode_rng(0, 0))


def test_episode_validation():
    X = np.zeros((4, 3))
    y = np.array([0, 0, 1, 1])
    kwargs = dict(
        way=2, shot=2, query_per_class=2,
        support_x=X, support_y=y, query_x=X.copy(), query_y=y,
        class_map=np.array([3, 7]),
        support_idx=np.arange(4), query_idx=np.arange(4, 8),
    )
    Episode(**kwargs)  # baseline is valid
    with pytest.raises(ValueError, match="disjoint"):
        Episode(**{**kwargs, "query_idx": np.array([0, 4, 5, 6])})
    with pytest.raises(ValueError, match="distinct"):
        Episode(**{**kwargs, "class_map": np.array([3, 3])})
    with pytest.raises(ValueError, match=r"lie in \[0, 1\]"):
        Episode(**{**kwargs, "query_y": np.array([0, 0, 1, 2])})


# --- evaluation -------------------------------------------------------------------


def test_run_episode_separable_dataset_is_perfect(kb):
    ds = make_blob_dataset(n_classes=6, per_class=20, dim=16, spread=8.0, noise=0.05, seed=33)
    ep = sample_episode(ds, 5, 5, 5, episode_rng(3, 0))
    res = run_episode(ep, "linear", AdjustmentConfig("none"), FitConfig(seed=1), kb)
    assert res.accuracy == 1.0
    assert res.correct.shape == (25,)
    assert res.hardness.shape == (25,)


def test_run_episode_centroid_one_shot_is_nearest_support(ds, kb):
    ep = sample_episode(ds, 5, 1, 4, episode_rng(4, 1))
    res = run_episode(ep, "centroid", AdjustmentConfig("none"), FitConfig(), kb)
    d2 = ((ep.query_x[:, None, :] - ep.support_x[None, :, :]) ** 2).sum(axis=2)
    nearest = ep.support_y[d2.argmin(axis=1)]
    assert np.array_equal(res.predicted, nearest)


def test_run_episode_label_permutation_equivariance(ds, kb):
    # relabeling episode classes by a permutation must permute predictions
    ep = sample_episode(ds, 4, 2, 3, episode_rng(5, 2))
    perm = np.array([2, 0, 3, 1])
    order_s = np.argsort(perm[ep.support_y], kind="stable")
    order_q = np.argsort(perm[ep.query_y], kind="stable")
    relabeled = Episode(
        way=4,
        shot=2,
        query_per_class=3,
        support_x=ep.support_x[order_s],
        support_y=perm[ep.support_y][order_s],
        query_x=ep.query_x[order_q],
        query_y=perm[ep.query_y][order_q],
        class_map=ep.class_map[np.argsort(perm)],
        support_idx=ep.support_idx[order_s],
        query_idx=ep.query_idx[order_q],
    )
    cfg = AdjustmentConfig("none")
    res = run_episode(ep, "centroid", cfg, FitConfig(), kb)
    res_p = run_episode(relabeled, "centroid", cfg, FitConfig(), kb)
    assert np.array_equal(perm[res.predicted][order_q], res_p.predicted)
    assert res.accuracy == res_p.accuracy


def test_run_episode_kb_dim_mismatch(ds):
    ep = sample_episode(ds, 2, 1, 1, episode_rng(6, 0))
    with pytest.raises(ValueError, match="does not match episode"):
        run_episode(ep, "linear", AdjustmentConfig("none"), FitConfig(), make_kb(m=2, dim=8))


def test_episode_hardness_matches_shape_and_seeds(ds, kb):
    ep = sample_episode(ds, 3, 2, 4, episode_rng(7, 0))
    h = episode_hardness(ep, kb)
    assert h.shape == (12,)
    assert np.array_equal(h, episode_hardness(ep, kb))
    assert np.all(np.isfinite(h))


# --- seed streams ------------------------------------------------------------------


def test_episode_rng_streams_are_independent():
    a = episode_rng(50, 0).standard_normal(5)
    b = episode_rng(50, 1).standard_normal(5)
    assert not np.allclose(a, b)
    assert np.array_equal(a, episode_rng(50, 0).standard_normal(5))


def test_derived_fit_seed_distinct_from_episode_stream():
    seeds = {derived_fit_seed(8, i) for i in range(100)}
    assert len(seeds) == 100
    assert derived_fit_seed(8, 3) == derived_fit_seed(8, 3)
    assert derived_fit_seed(8, 3) != derived_fit_seed(9, 3)


def test_parallel_indexed_preserves_order():
    out = parallel_indexed(lambda i: i * i, 20, threads=4)
    assert out == [i * i for i in range(20)]
    assert parallel_indexed(lambda i: i, 5, threads=1) == [0, 1, 2, 3, 4]


# --- batch runs --------------------------------------------------------------------


def test_run_many_threaded_equals_serial(ds, kb):
    kwargs = dict(
        ds=ds, way=3, shot=1, query=3, count=8, classifier="linear",
        adj_cfg=AdjustmentConfig("none"), fit_cfg=FitConfig(iterations=20),
        kb=kb, seed=60,
    )
    serial = run_many(**kwargs, threads=1)
    threaded = run_many(**kwargs, threads=4)
    for a, b in zip(serial, threaded):
        assert np.array_equal(a.predicted, b.predicted)
        assert np.array_equal(a.hardness, b.hardness)


def test_run_many_uses_per_episode_fit_seeds(ds, kb):
    # the per-index derived seed must override whatever seed the caller set
    a = run_many(ds, 3, 1, 3, 4, "linear", AdjustmentConfig("none"),
                 FitConfig(iterations=20, seed=1), kb, seed=61)
    b = run_many(ds, 3, 1, 3, 4, "linear", AdjustmentConfig("none"),
                 FitConfig(iterations=20, seed=999), kb, seed=61)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.predicted, rb.predicted)


def test_run_many_rejects_zero_count(ds, kb):
    with pytest.raises(ValueError, match="episode count"):
        run_many(ds, 3, 1, 3, 0, "linear", AdjustmentConfig("none"), FitConfig(), kb, seed=0)


def test_random_uniform_features_score_near_chance(kb):
    # features carrying no class signal: 5-way accuracy concentrates near 20%
    rng = np.random.default_rng(77)
    from ifsl.knowledge import FeatureDataset

    feats = rng.standard_normal((600, 16))
    labels = np.repeat(np.arange(10), 60)
    ds = FeatureDataset(features=feats, labels=labels, n_classes=10)
    results = run_many(
        ds, 5, 1, 3, 300, "centroid", AdjustmentConfig("none"), FitConfig(), kb, seed=62
    )
    acc = float(np.mean([r.accuracy for r in results]))
    assert abs(acc - 0.2) < 0.04
