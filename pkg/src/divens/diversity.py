"""Pairwise diversity metrics between classifiers.

Five metrics compare the correctness patterns of two models on the same
validation set; the sixth compares architectural vectors. All six live in
[0, 1] and are symmetric. The canonical ordering in ``METRIC_NAMES`` is a
wire-format contract shared with the distance surrogate and the distance
dataset CSV.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

METRIC_NAMES = ("prop1", "prop2", "prop_harm", "dis", "cos_dist", "arch_dist")


class LengthMismatchError(ValueError):
    """Compared vectors have different lengths."""


@dataclass(frozen=True)
class PairCounts:
    """Agreement counts for a pair of correctness vectors.

    n11: both correct, n00: both incorrect, n01: only the second correct,
    n10: only the first correct. The four counts sum to the number of
    validation instances.
    """

    n11: int
    n00: int
    n01: int
    n10: int

    @property
    def total(self) -> int:
        return self.n11 + self.n00 + self.n01 + self.n10


def pair_counts(p_i: np.ndarray, p_j: np.ndarray) -> PairCounts:
    """Count the four agreement cases between two correctness vectors."""
    p_i = np.asarray(p_i, dtype=bool)
    p_j = np.asarray(p_j, dtype=bool)
    if p_i.shape != p_j.shape:
        raise LengthMismatchError(f"lengths differ: {p_i.shape} vs {p_j.shape}")
    if p_i.size < 1:
        raise LengthMismatchError("correctness vectors must be non-empty")
    return PairCounts(
        n11=int(np.sum(p_i & p_j)),
        n00=int(np.sum(~p_i & ~p_j)),
        n01=int(np.sum(~p_i & p_j)),
        n10=int(np.sum(p_i & ~p_j)),
    )


def metric_prop1(c: PairCounts) -> float:
    """Proportion of differing errors among instances where at least one model is correct."""
    denom = c.n11 + c.n01 + c.n10
    return (c.n01 + c.n10) / denom if denom else 0.0


def metric_prop2(c: PairCounts) -> float:
    """Proportion of differing errors among instances where at least one model is incorrect."""
    denom = c.n00 + c.n01 + c.n10
    return (c.n01 + c.n10) / denom if denom else 0.0


def metric_prop_harm(c: PairCounts) -> float:
    """Harmonic mean of the two proportion metrics (0 when both are 0)."""
    p1 = metric_prop1(c)
    p2 = metric_prop2(c)
    return 2.0 * p1 * p2 / (p1 + p2) if p1 + p2 else 0.0


def metric_dis(c: PairCounts) -> float:
    """Disagreement rate: fraction of instances where exactly one model is correct."""
    return (c.n01 + c.n10) / c.total


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    # degenerate-norm rule: both zero -> 0, exactly one zero -> 1
    dot = float(np.dot(a, b))
    sq_a = float(np.dot(a, a))
    sq_b = float(np.dot(b, b))
    if sq_a == 0.0 and sq_b == 0.0:
        return 0.0
    if sq_a == 0.0 or sq_b == 0.0:
        return 1.0
    value = 1.0 - dot / math.sqrt(sq_a * sq_b)
    return min(max(value, 0.0), 1.0)


def metric_cos_dist(w_i: np.ndarray, w_j: np.ndarray) -> float:
    """Cosine distance between binary wrong-prediction vectors."""
    w_i = np.asarray(w_i, dtype=np.float64)
    w_j = np.asarray(w_j, dtype=np.float64)
    if w_i.shape != w_j.shape:
        raise LengthMismatchError(f"lengths differ: {w_i.shape} vs {w_j.shape}")
    return _cosine_distance(w_i, w_j)


def metric_arch_dist(a_i: np.ndarray, a_j: np.ndarray) -> float:
    """Cosine distance between architectural vectors (entries >= 0, so in [0,1])."""
    a_i = np.asarray(a_i, dtype=np.float64)
    a_j = np.asarray(a_j, dtype=np.float64)
    if a_i.shape != a_j.shape:
        raise LengthMismatchError(f"lengths differ: {a_i.shape} vs {a_j.shape}")
    return _cosine_distance(a_i, a_j)


@dataclass(frozen=True)
class DistanceVector:
    """All six metric values for one pair, in canonical order."""

    prop1: float
    prop2: float
    prop_harm: float
    dis: float
    cos_dist: float
    arch_dist: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.prop1, self.prop2, self.prop_harm, self.dis, self.cos_dist, self.arch_dist],
            dtype=np.float64,
        )

    @staticmethod
    def from_array(values: np.ndarray) -> "DistanceVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (6,):
            raise ValueError(f"expected 6 metric values, got shape {values.shape}")
        return DistanceVector(*(float(v) for v in values))


def exact_distance(profile_i, profile_j, arch_i: np.ndarray, arch_j: np.ndarray) -> DistanceVector:
    """Assemble the full metric vector from prediction profiles and arch vectors.

    Profiles only need ``p`` (correctness) and ``w`` (wrong) attributes, as
    produced by the learner.
    """
    counts = pair_counts(profile_i.p, profile_j.p)
    return DistanceVector(
        prop1=metric_prop1(counts),
        prop2=metric_prop2(counts),
        prop_harm=metric_prop_harm(counts),
        dis=metric_dis(counts),
        cos_dist=metric_cos_dist(profile_i.w, profile_j.w),
        arch_dist=metric_arch_dist(arch_i, arch_j),
    )
