"""Query hardness, accuracy aggregation, and hardness-binned reporting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import as_vector, cosine_similarity, relu

_S_CLAMP = 1e-12


def query_hardness(r, class_profiles: Sequence[np.ndarray], gt: int) -> float:
    """Log-odds hardness of a query from pre-trained responses.

    ``r`` is the query's pre-trained logit vector and ``class_profiles`` the
    per-class averaged support logits. With s the softmax (over classes) of
    the cosine similarities between the rectified vectors, hardness is
    log((1 - s) / s): 0 when s = 1/2, positive when the true class looks
    dissimilar. s is clamped to [1e-12, 1 - 1e-12].
    """
    rv = relu(as_vector(r))
    if not class_profiles:
        raise ValueError("need at least one class profile")
    if not 0 <= gt < len(class_profiles):
        raise ValueError(f"ground-truth index {gt} out of range")
    sims = np.array([cosine_similarity(rv, relu(as_vector(p))) for p in class_profiles])
    e = np.exp(sims - sims.max())
    s = float(e[gt] / e.sum())
    s = min(max(s, _S_CLAMP), 1.0 - _S_CLAMP)
    return math.log((1.0 - s) / s)


@dataclass(frozen=True)
class HardnessBin:
    lo: float
    hi: float
    count: int
    acc: float


@dataclass(frozen=True)
class Report:
    episodes: int
    mean_acc: float
    ci95: float
    hardness_bins: tuple[HardnessBin, ...] = field(default_factory=tuple)


def accuracy_report(results) -> Report:
    """Mean per-episode accuracy (percent) with a normal-theory 95% interval.

    The interval half-width is 1.96 * sd / sqrt(T) over per-episode
    accuracies (sample standard deviation); a single episode reports 0.
    """
    accs = np.array([100.0 * r.accuracy for r in results])
    if accs.size == 0:
        raise ValueError("no episode results to aggregate")
    if accs.size == 1:
        ci = 0.0
    else:
        ci = 1.96 * float(np.std(accs, ddof=1)) / math.sqrt(accs.size)
    return Report(episodes=accs.size, mean_acc=float(accs.mean()), ci95=ci)


def hardness_report(results, bins: int) -> tuple[HardnessBin, ...]:
    """Pool all queries, sort by hardness, and split into equal-count quantile bins.

    When the pool size is not divisible by ``bins`` the remainder goes to the
    lowest-hardness bins, one extra query each.
    """
    if bins < 1:
        raise ValueError(f"bin count must be >= 1, got {bins}")
    hardness = np.concatenate([np.asarray(r.hardness, dtype=np.float64) for r in results])
    correct = np.concatenate([np.asarray(r.correct, dtype=bool) for r in results])
    total = hardness.size
    if total < bins:
        raise ValueError(f"{total} queries cannot fill {bins} bins")
    order = np.argsort(hardness, kind="stable")
    base, rem = divmod(total, bins)
    out = []
    start = 0
    for b in range(bins):
        size = base + (1 if b < rem else 0)
        members = order[start : start + size]
        start += size
        h = hardness[members]
        out.append(
            HardnessBin(
                lo=float(h.min()),
                hi=float(h.max()),
                count=size,
                acc=float(100.0 * correct[members].mean()),
            )
        )
    return tuple(out)


def with_bins(report: Report, bins: tuple[HardnessBin, ...]) -> Report:
    return Report(report.episodes, report.mean_acc, report.ci95, tuple(bins))


def bins_to_csv_rows(bins: Sequence[HardnessBin]) -> list[list]:
    rows = [["lo", "hi", "count", "acc"]]
    for b in bins:
        rows.append([repr(b.lo), repr(b.hi), b.count, repr(b.acc)])
    return rows
