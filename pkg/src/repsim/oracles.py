"""Closed-form null baselines and exhaustive small-n oracles.

Production code never imports this module; it exists to check the
Monte-Carlo machinery against exact theory.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import as_embedding
from .metrics import similarity

__all__ = [
    "NullBaseline",
    "expected_cross_cov_energy",
    "expected_mknn_null",
    "hypergeom_intersection_stats",
    "max_inflation_bound",
    "gumbel_max_approx",
    "exact_permutation_null",
    "cross_cov_energy",
]


@dataclass(frozen=True)
class NullBaseline:
    expectation: float
    variance: float | None
    regime: str


def expected_cross_cov_energy(n: int, d_x: int, d_y: int) -> float:
    """Null expectation of ``|Xc' Yc / (n-1)|_F^2`` for isotropic independent rows."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if d_x < 0 or d_y < 0:
        raise ValueError("dimensions must be non-negative")
    return d_x * d_y / (n - 1)


def cross_cov_energy(X, Y) -> float:
    """Observed ``|Xc' Yc / (n-1)|_F^2``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n = X.shape[0]
    C = (X - X.mean(0)).T @ (Y - Y.mean(0)) / (n - 1)
    return float(np.sum(C * C))


def expected_mknn_null(n: int, k: int) -> float:
    """Null expectation ``k / (n - 1)`` of mutual k-NN overlap."""
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    return k / (n - 1)


def hypergeom_intersection_stats(n: int, k: int) -> tuple[float, float]:
    """Mean and variance of one anchor's neighbour-set intersection size under H0.

    Two independent uniform k-subsets of an (n-1)-set intersect in a
    hypergeometric number of elements.
    """
    if n < 3:
        raise ValueError(f"n must be >= 3, got {n}")
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    mean = k * k / (n - 1)
    var = k * k * (n - 1 - k) ** 2 / ((n - 1) ** 2 * (n - 2))
    return mean, var


def mknn_null_baseline(n: int, k: int) -> NullBaseline:
    mean, var = hypergeom_intersection_stats(n, k)
    return NullBaseline(mean / k, var / (k * k), "mknn overlap (per-anchor variance)")


def cross_cov_null_baseline(n: int, d_x: int, d_y: int) -> NullBaseline:
    return NullBaseline(expected_cross_cov_energy(n, d_x, d_y), None, "cross-covariance energy")


def max_inflation_bound(mu: float, sigma: float, M: int) -> float:
    """Upper bound ``mu + 3 sigma sqrt(log M)`` on the expected max of M sub-Gaussian scores."""
    if M < 2:
        raise ValueError(f"M must be >= 2, got {M}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return mu + 3.0 * sigma * math.sqrt(math.log(M))


def gumbel_max_approx(mu: float, sigma: float, M: int) -> float:
    """Heuristic expected maximum of M i.i.d. normal scores (diagnostic only)."""
    if M < 2:
        raise ValueError(f"M must be >= 2, got {M}")
    a = math.sqrt(2 * math.log(M))
    return mu + sigma * (a - (math.log(math.log(M)) + math.log(4 * math.pi)) / (2 * a))


def exact_permutation_null(X, Y, metric, max_n: int = 7) -> np.ndarray:
    """Metric at every row permutation of `Y` (lexicographic order, identity first).

    Each value is a fresh ``similarity(X, Y[perm])`` call, so this oracle shares
    nothing with the prepared-state fast path used by calibration.
    """
    X = as_embedding(X, "X")
    Y = as_embedding(Y, "Y")
    n = X.shape[0]
    if n > max_n:
        raise ValueError(f"exact enumeration limited to n <= {max_n}, got n={n}")
    return np.array([similarity(X, Y[list(p)], metric)
                     for p in itertools.permutations(range(n))])


def exact_p_value(X, Y, metric) -> float:
    """Exact permutation p-value: fraction of all n! pairings scoring >= observed."""
    null = exact_permutation_null(X, Y, metric)
    return float(np.mean(null >= null[0]))
