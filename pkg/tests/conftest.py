"""Shared fixtures: a small deterministic dataset/knowledge base pair for unit
tests and the full default synthetic benchmark shared by the acceptance suite.
"""

import numpy as np
import pytest

from ifsl.knowledge import FeatureDataset, KnowledgeBase
from ifsl.synth import SynthConfig, gen_confounded


def make_blob_dataset(
    n_classes: int = 10,
    per_class: int = 30,
    dim: int = 16,
    spread: float = 3.0,
    noise: float = 0.5,
    seed: int = 11,
) -> FeatureDataset:
    """Gaussian blobs around random class centers; easy but not trivial."""
    rng = np.random.default_rng(seed)
    centers = spread * rng.standard_normal((n_classes, dim))
    feats = np.concatenate(
        [c + noise * rng.standard_normal((per_class, dim)) for c in centers]
    )
    labels = np.repeat(np.arange(n_classes), per_class)
    return FeatureDataset(feats, labels, n_classes)


def make_kb(m: int = 4, dim: int = 16, seed: int = 5) -> KnowledgeBase:
    rng = np.random.default_rng(seed)
    return KnowledgeBase(
        class_means=rng.standard_normal((m, dim)),
        pre_weights=rng.standard_normal((m, dim)),
        pre_bias=rng.standard_normal(m),
    )


@pytest.fixture
def blob_ds() -> FeatureDataset:
    return make_blob_dataset()


@pytest.fixture
def small_kb() -> KnowledgeBase:
    return make_kb()


@pytest.fixture(scope="session")
def default_synth():
    """The default confounded benchmark (64-dim, 16+16 classes, 4 strata)."""
    return gen_confounded(SynthConfig())
