"""Rank statistics: Mann-Whitney U and Spearman correlation.

Implemented directly (fractional ranks, tie-corrected normal approximation,
no continuity correction) so the comparison harness has no dependency
beyond numpy; the test suite cross-checks both against scipy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def fractional_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; ties receive the mean of their rank range."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class MannWhitneyResult:
    u1: float
    u2: float
    z: float
    p_value: float


def mann_whitney_u(x, y) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test via rank sums with tie-corrected variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n1, n2 = len(x), len(y)
    if n1 < 1 or n2 < 1:
        raise ValueError("both samples must be non-empty")
    ranks = fractional_ranks(np.concatenate([x, y]))
    r1 = float(ranks[:n1].sum())
    u1 = r1 - n1 * (n1 + 1) / 2.0
    u2 = n1 * n2 - u1

    n = n1 + n2
    _, counts = np.unique(np.concatenate([x, y]), return_counts=True)
    tie_term = float(np.sum(counts.astype(np.float64) ** 3 - counts))
    if n < 2:
        sigma_sq = 0.0
    else:
        sigma_sq = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if sigma_sq <= 0:
        return MannWhitneyResult(u1=u1, u2=u2, z=0.0, p_value=1.0)
    z = (u1 - n1 * n2 / 2.0) / math.sqrt(sigma_sq)
    p = 2.0 * 0.5 * math.erfc(abs(z) / math.sqrt(2.0))
    return MannWhitneyResult(u1=u1, u2=u2, z=z, p_value=min(p, 1.0))


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    degenerate: bool


def spearman(x, y) -> SpearmanResult:
    """Spearman rank correlation; zero-variance input yields rho 0 with a flag."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-D and of equal length")
    if len(x) < 2:
        return SpearmanResult(rho=0.0, degenerate=True)
    rx = fractional_ranks(x)
    ry = fractional_ranks(y)
    sx = rx.std()
    sy = ry.std()
    if sx == 0.0 or sy == 0.0:
        return SpearmanResult(rho=0.0, degenerate=True)
    rho = float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))
    return SpearmanResult(rho=rho, degenerate=False)
