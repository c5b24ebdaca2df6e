"""Permutation null calibration of similarity scores.

Scalar calibration compares ``s(X, Y)`` with ``K`` scores of permuted pairings
``s(X, Y[pi_k])``. Aggregation-aware calibration does the same for a summary
``T(S)`` of a whole layer-by-layer score matrix, applying one permutation to
every layer of the second model per replicate.

Null replicates are a pure function of ``(seed, K, n)`` (see
:class:`repsim.core.PermutationPlan`), so results are bitwise reproducible and
independent of ``n_jobs``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .core import (
    DegenerateInputError,
    PermutationPlan,
    apply_permutation,
    as_embedding,
    as_stack,
    n_jobs_default,
)
from .metrics import MetricSpec, Scorer, as_spec, make_scorer

__all__ = [
    "CalibrationResult",
    "AggregateCalibrationResult",
    "p_value",
    "critical_value",
    "calibrated_score",
    "calibrate_scalar",
    "layer_similarity_matrix",
    "null_similarity_matrices",
    "calibrate_aggregate",
    "aggregate",
    "multiplicity_adjust",
    "DEFAULT_K",
    "DEFAULT_ALPHA",
]

DEFAULT_K = 200
DEFAULT_ALPHA = 0.05
AGGREGATORS = ("max", "mean", "topk")


def _check_alpha(alpha: float):
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def p_value(s_obs: float, null_scores) -> float:
    """Add-one right-tail permutation p-value; ties count against the observation."""
    null = np.asarray(null_scores, dtype=np.float64).ravel()
    if null.size == 0:
        raise ValueError("null distribution is empty")
    return (1 + int(np.count_nonzero(null >= s_obs))) / (null.size + 1)


def critical_index(K: int, alpha: float) -> int:
    """1-based order-statistic index ``ceil((1 - alpha)(K + 1))``."""
    _check_alpha(alpha)
    # decimal alpha (0.05, 0.1, ...) is taken at face value, not as its binary approximation
    a = Fraction(repr(float(alpha)))
    return max(1, math.ceil((1 - a) * (K + 1)))


def critical_value(s_obs: float, null_scores, alpha: float) -> float:
    """Right-tail critical value from the combined ``{s_obs} + nulls`` multiset."""
    null = np.asarray(null_scores, dtype=np.float64).ravel()
    if null.size == 0:
        raise ValueError("null distribution is empty")
    idx = critical_index(null.size, alpha)
    combined = np.sort(np.concatenate(([float(s_obs)], null)))
    return float(combined[idx - 1])


def calibrated_score(s_obs: float, tau: float, s_max: float | None = 1.0) -> float:
    """Max-preserving calibrated score.

    ``max((s_obs - tau) / (s_max - tau), 0)`` for bounded metrics, the plain
    excess ``max(s_obs - tau, 0)`` when ``s_max`` is ``None`` (unbounded).
    """
    if s_max is None or math.isinf(s_max):
        return max(s_obs - tau, 0.0)
    if not s_max > tau:
        raise ValueError(f"s_max={s_max} must exceed the critical value tau={tau}")
    return max((s_obs - tau) / (s_max - tau), 0.0)


def _gated_score(s_obs, tau, s_max):
    # tau can only reach s_max when nulls attain the maximum; then s_obs <= tau
    if s_max is not None and not math.isinf(s_max) and tau >= s_max:
        return 0.0
    return calibrated_score(s_obs, tau, s_max)


@dataclass(frozen=True)
class CalibrationResult:
    s_obs: float
    null_scores: np.ndarray = field(repr=False)
    tau_alpha: float
    p_value: float
    s_cal: float
    alpha: float
    K: int
    s_max: float | None
    mode: str  # 'bounded' or 'unbounded'
    seed: int

    @property
    def significant(self) -> bool:
        return self.p_value <= self.alpha

    def to_dict(self, include_nulls: bool = True) -> dict:
        out = {
            "s_obs": self.s_obs,
            "tau_alpha": self.tau_alpha,
            "p_value": self.p_value,
            "s_cal": self.s_cal,
            "alpha": self.alpha,
            "K": self.K,
            "s_max": self.s_max,
            "mode": self.mode,
            "seed": self.seed,
        }
        if include_nulls:
            out["null_scores"] = [float(v) for v in self.null_scores]
        return out


@dataclass(frozen=True)
class AggregateCalibrationResult:
    S: np.ndarray = field(repr=False)
    T_obs: float
    null_aggregates: np.ndarray = field(repr=False)
    tau_agg: float
    p_agg: float
    T_cal: float
    aggregator: str
    topk: int | None
    alpha: float
    K: int
    s_max: float | None
    mode: str
    seed: int

    def to_dict(self, include_nulls: bool = True) -> dict:
        out = {
            "S": [[float(v) for v in row] for row in self.S],
            "T_obs": self.T_obs,
            "tau_agg": self.tau_agg,
            "p_agg": self.p_agg,
            "T_cal": self.T_cal,
            "aggregator": self.aggregator,
            "topk": self.topk,
            "alpha": self.alpha,
            "K": self.K,
            "s_max": self.s_max,
            "mode": self.mode,
            "seed": self.seed,
        }
        if include_nulls:
            out["null_aggregates"] = [float(v) for v in self.null_aggregates]
        return out


def aggregate(S, aggregator: str = "max", topk: int | None = None) -> float:
    """Summarize a layer-pair score matrix: max, mean or mean of the top-k entries."""
    S = np.asarray(S, dtype=np.float64)
    if aggregator == "max":
        return float(S.max())
    if aggregator == "mean":
        return float(S.mean())
    if aggregator == "topk":
        if topk is None or not 1 <= topk <= S.size:
            raise ValueError(f"topk must be in 1..{S.size}, got {topk}")
        flat = np.sort(S.ravel())
        return float(flat[-topk:].mean())
    raise ValueError(f"unknown aggregator {aggregator!r}; expected one of {AGGREGATORS}")


# ---------------------------------------------------------------------------
# Replicate engine
# ---------------------------------------------------------------------------

def _run_replicates(fn: Callable[[int], np.ndarray], K: int, n_jobs: int | None) -> list:
    """Evaluate ``fn(k)`` for k in 0..K-1; output order is by k, whatever the schedule."""
    n_jobs = n_jobs_default() if n_jobs is None else max(1, int(n_jobs))
    if n_jobs == 1 or K == 1:
        return [fn(k) for k in range(K)]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, range(K)))


def _replicate(fn, k):
    try:
        return fn(k)
    except DegenerateInputError as exc:
        raise DegenerateInputError(f"null replicate {k}: {exc}") from exc


def _resolve(metric, s_max):
    """Return (scorer or None, callable or None, s_max)."""
    if callable(metric) and not isinstance(metric, (MetricSpec, str)):
        return None, metric, s_max
    spec = as_spec(metric)
    return make_scorer(spec), None, spec.s_max if s_max == "auto" else s_max


def null_similarity_matrices(A: Sequence, B: Sequence, metric, K: int = DEFAULT_K,
                             seed: int = 0, n_jobs: int | None = None,
                             order: Sequence[int] | None = None):
    """Observed layer-pair matrix and its K permutation-null replicates.

    Returns ``(S, S_null)`` with ``S_null[k]`` computed on ``B`` with rows
    permuted by replicate ``k`` of ``PermutationPlan(seed, K, n)``. `order`
    only changes the evaluation schedule, never the result.
    """
    A = as_stack(A, "A")
    B = as_stack(B, "B")
    n = A[0].shape[0]
    if B[0].shape[0] != n:
        raise ValueError(f"stacks have different sample counts: {n} vs {B[0].shape[0]}")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    plan = PermutationPlan(seed, K, n)
    scorer, fn, _ = _resolve(metric, None)

    if scorer is not None:
        sa, sb = scorer.prepare_stack(A), scorer.prepare_stack(B)
        S = scorer.score_matrix(sa, sb)

        def one(k):
            return scorer.score_matrix(sa, sb, plan.permutation(k))
    else:
        S = np.array([[float(fn(a, b)) for b in B] for a in A])

        def one(k):
            perm = plan.permutation(k)
            Bp = [apply_permutation(b, perm) for b in B]
            return np.array([[float(fn(a, b)) for b in Bp] for a in A])

    ks = list(range(K)) if order is None else [int(k) for k in order]
    if sorted(ks) != list(range(K)):
        raise ValueError("order must be a permutation of range(K)")
    mats = _run_replicates(lambda i: _replicate(one, ks[i]), K, n_jobs)
    S_null = np.empty((K,) + S.shape)
    for i, k in enumerate(ks):
        S_null[k] = mats[i]
    return S, S_null


def calibrate_scalar(X, Y, metric, K: int = DEFAULT_K, alpha: float = DEFAULT_ALPHA,
                     seed: int = 0, *, s_max="auto", n_jobs: int | None = None,
                     order: Sequence[int] | None = None) -> CalibrationResult:
    """Null-calibrate one similarity score.

    Parameters
    ----------
    X, Y : ndarray
        Row-aligned embeddings.
    metric : MetricSpec, str or callable
        A spec / metric name, or any ``f(X, Y) -> float``. For a callable the
        upper bound comes from `s_max` (``'auto'`` means unbounded).
    K : int
        Number of permutation replicates.
    alpha : float
        Level defining the critical value.
    seed : int
        Seed of the permutation plan.
    """
    _check_alpha(alpha)
    X = as_embedding(X, "X")
    Y = as_embedding(Y, "Y")
    S, S_null = null_similarity_matrices([X], [Y], metric, K, seed, n_jobs, order)
    _, fn, bound = _resolve(metric, s_max)
    if fn is not None and s_max == "auto":
        bound = None
    s_obs = float(S[0, 0])
    null = S_null[:, 0, 0].copy()
    null.flags.writeable = False
    tau = critical_value(s_obs, null, alpha)
    return CalibrationResult(
        s_obs=s_obs,
        null_scores=null,
        tau_alpha=tau,
        p_value=p_value(s_obs, null),
        s_cal=_gated_score(s_obs, tau, bound),
        alpha=alpha,
        K=K,
        s_max=bound,
        mode="unbounded" if bound is None or math.isinf(bound) else "bounded",
        seed=seed,
    )


def layer_similarity_matrix(A: Sequence, B: Sequence, metric) -> np.ndarray:
    """``S[l, m] = metric(A[l], B[m])`` for two layer stacks."""
    A = as_stack(A, "A")
    B = as_stack(B, "B")
    if A[0].shape[0] != B[0].shape[0]:
        raise ValueError(f"stacks have different sample counts: {A[0].shape[0]} vs {B[0].shape[0]}")
    scorer, fn, _ = _resolve(metric, None)
    if scorer is None:
        return np.array([[float(fn(a, b)) for b in B] for a in A])
    return scorer.score_matrix(scorer.prepare_stack(A), scorer.prepare_stack(B))


def calibrate_aggregate(A: Sequence, B: Sequence, metric, aggregator: str = "max",
                        K: int = DEFAULT_K, alpha: float = DEFAULT_ALPHA, seed: int = 0, *,
                        topk: int | None = None, s_max="auto", n_jobs: int | None = None,
                        order: Sequence[int] | None = None) -> AggregateCalibrationResult:
    """Aggregation-aware calibration of ``T(S)`` over all layer pairs.

    Each replicate permutes the samples of every layer of `B` with the same
    permutation, recomputes the full matrix and re-applies the aggregator.
    """
    _check_alpha(alpha)
    if aggregator not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {aggregator!r}; expected one of {AGGREGATORS}")
    M = len(A) * len(B)
    if aggregator == "topk" and (topk is None or not 1 <= topk <= M):
        raise ValueError(f"topk must be in 1..{M}, got {topk}")
    S, S_null = null_similarity_matrices(A, B, metric, K, seed, n_jobs, order)
    _, fn, bound = _resolve(metric, s_max)
    if fn is not None and s_max == "auto":
        bound = None
    T_obs = aggregate(S, aggregator, topk)
    nulls = np.array([aggregate(m, aggregator, topk) for m in S_null])
    nulls.flags.writeable = False
    tau = critical_value(T_obs, nulls, alpha)
    return AggregateCalibrationResult(
        S=S,
        T_obs=T_obs,
        null_aggregates=nulls,
        tau_agg=tau,
        p_agg=p_value(T_obs, nulls),
        T_cal=_gated_score(T_obs, tau, bound),
        aggregator=aggregator,
        topk=topk if aggregator == "topk" else None,
        alpha=alpha,
        K=K,
        s_max=bound,
        mode="unbounded" if bound is None or math.isinf(bound) else "bounded",
        seed=seed,
    )


def entrywise_calibrated(S, S_null, alpha: float, s_max: float | None = 1.0) -> np.ndarray:
    """Calibrate every cell of `S` against its own null (no selection correction)."""
    S = np.asarray(S, dtype=np.float64)
    S_null = np.asarray(S_null, dtype=np.float64)
    K = S_null.shape[0]
    idx = critical_index(K, alpha)
    combined = np.sort(np.concatenate([S[None], S_null]), axis=0)
    tau = combined[idx - 1]
    if s_max is None:
        return np.maximum(S - tau, 0.0)
    out = np.zeros_like(S)
    ok = tau < s_max
    out[ok] = np.maximum((S[ok] - tau[ok]) / (s_max - tau[ok]), 0.0)
    return out


# ---------------------------------------------------------------------------
# Multiplicity
# ---------------------------------------------------------------------------

def multiplicity_adjust(p_values: Sequence[float], method: str = "bh") -> np.ndarray:
    """Benjamini-Hochberg (step-up) or Holm (step-down) adjusted p-values.

    Output keeps the input order; adjusted values are clipped to 1.
    """
    p = np.asarray(p_values, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("no p-values to adjust")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ps = p[order]
    ranks = np.arange(1, m + 1)
    if method == "bh":
        adj = np.minimum.accumulate((ps * m / ranks)[::-1])[::-1]
    elif method == "holm":
        adj = np.maximum.accumulate(ps * (m - ranks + 1))
    else:
        raise ValueError(f"unknown method {method!r}; expected 'bh' or 'holm'")
    out = np.empty(m)
    out[order] = np.minimum(adj, 1.0)
    return out
