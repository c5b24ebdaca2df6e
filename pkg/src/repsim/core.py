"""Shared data model: embedding validation, centering and permutation plans.

Embedding matrices are plain 2-D ``float64`` ndarrays with samples on rows.
Layer stacks are sequences of such arrays sharing the same row count.

Permutations are generated from a pinned, dependency-free source so that a
``(seed, K, n)`` triple reproduces the same null replicates bit-for-bit on any
machine, in any evaluation order:

* replicate ``k`` (0-based) gets the seed ``splitmix64(seed + (k + 1) * GAMMA)``,
* the replicate seed drives a SplitMix64 stream,
* a Durstenfeld Fisher-Yates shuffle draws ``j = (u * (i + 1)) >> 64`` from it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "DegenerateInputError",
    "as_embedding",
    "as_stack",
    "center",
    "mix64",
    "derive_seed",
    "PermutationPlan",
    "permutation",
    "apply_permutation",
    "inverse_permutation",
]

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


class DegenerateInputError(ValueError):
    """A metric or statistic is undefined for the given input (zero norm, rank collapse...)."""


def as_embedding(X, name: str = "X") -> np.ndarray:
    """Validate and return `X` as a C-contiguous float64 matrix.

    Raises ``ValueError`` unless `X` is 2-D with at least two rows, one column
    and only finite entries.
    """
    arr = np.ascontiguousarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    n, d = arr.shape
    if n < 2 or d < 1:
        raise ValueError(f"{name} needs n >= 2 rows and d >= 1 columns, got {arr.shape}")
    if not np.isfinite(arr).all():
        i, j = np.argwhere(~np.isfinite(arr))[0]
        raise ValueError(f"{name} has a non-finite entry at row {i}, column {j}")
    return arr


def as_stack(layers: Sequence, name: str = "stack") -> list[np.ndarray]:
    """Validate a layer stack: a non-empty sequence of embeddings with equal n."""
    if len(layers) == 0:
        raise ValueError(f"{name} is empty")
    out = [as_embedding(L, f"{name}[{i}]") for i, L in enumerate(layers)]
    sizes = {L.shape[0] for L in out}
    if len(sizes) > 1:
        raise ValueError(f"{name} has ragged sample counts {sorted(sizes)}")
    return out


def center(X) -> np.ndarray:
    """Subtract column means (equivalent to ``H @ X`` without forming ``H``)."""
    X = np.asarray(X, dtype=np.float64)
    return X - X.mean(axis=0, keepdims=True)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *path: int) -> int:
    """Derive a child seed from `seed` along an integer path (pure function)."""
    s = seed & MASK64
    for k in path:
        s = mix64(s + (int(k) + 1) * GAMMA)
    return s


def _fisher_yates(n: int, seed: int) -> np.ndarray:
    state = seed & MASK64
    a = list(range(n))
    for i in range(n - 1, 0, -1):
        state = (state + GAMMA) & MASK64
        j = (mix64(state) * (i + 1)) >> 64
        a[i], a[j] = a[j], a[i]
    return np.array(a, dtype=np.intp)


@dataclass(frozen=True)
class PermutationPlan:
    """K reproducible uniform permutations of ``range(n)``.

    Replicates are indexed ``0..K-1``; replicate ``k`` depends only on
    ``(seed, k, n)``, never on which other replicates were drawn or in what order.
    """

    seed: int
    K: int
    n: int
    replicate_seeds: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        seeds = tuple(derive_seed(self.seed, k) for k in range(self.K))
        object.__setattr__(self, "replicate_seeds", seeds)

    def permutation(self, k: int) -> np.ndarray:
        if not 0 <= k < self.K:
            raise IndexError(f"replicate index {k} outside 0..{self.K - 1}")
        return _fisher_yates(self.n, self.replicate_seeds[k])

    def __iter__(self):
        for k in range(self.K):
            yield self.permutation(k)


def permutation(plan: PermutationPlan, k: int) -> np.ndarray:
    """Permutation for replicate `k` of `plan` (0-based)."""
    return plan.permutation(k)


def apply_permutation(Y, perm) -> np.ndarray:
    """Return ``Y[perm]``: row ``i`` of the result is row ``perm[i]`` of `Y`."""
    Y = np.asarray(Y)
    perm = np.asarray(perm, dtype=np.intp)
    if perm.ndim != 1 or perm.shape[0] != Y.shape[0]:
        raise ValueError(
            f"permutation of length {perm.shape[0] if perm.ndim else 0} "
            f"does not match {Y.shape[0]} rows"
        )
    return Y[perm]


def inverse_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.intp)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.shape[0], dtype=np.intp)
    return inv


def n_jobs_default() -> int:
    """Worker cap from ``REPSIM_THREADS`` (falls back to the core count)."""
    import os

    env = os.environ.get("REPSIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1
