"""Raw representational-similarity metrics.

Every metric is a pure function of two row-aligned embedding matrices.  Besides
the plain functions (:func:`cka`, :func:`rsa`, :func:`mutual_knn`, ...) each
metric has a *scorer* (see :func:`make_scorer`) that splits evaluation into

``prepare(X)``
    per-matrix state (normalized centered Gram, centered RDM ranks, neighbour
    table, whitened basis, ...), computed once;
``permute(state, perm)``
    the state of ``X[perm]`` derived from the state of ``X``;
``score_matrix(states_a, states_b, perm)``
    all pairwise scores with every B state row-permuted by ``perm``.

Calibration only ever permutes sample correspondences, so preparing once and
permuting the state turns each null replicate into an O(n^2) (or cheaper)
operation instead of a full recomputation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import DegenerateInputError, as_embedding, center, inverse_permutation

__all__ = [
    "MetricSpec",
    "METRIC_NAMES",
    "gram",
    "center_gram",
    "hsic_unbiased",
    "cka",
    "cca_similarity",
    "canonical_correlations",
    "rv_coefficient",
    "rdm",
    "rsa",
    "procrustes_similarity",
    "knn_sets",
    "knn_adjacency",
    "mutual_knn",
    "cycle_knn",
    "cknna",
    "similarity",
    "make_scorer",
]

FAMILIES = ("cka", "cca", "rv", "rsa", "procrustes", "mknn", "cycle-knn", "cknna")
DISTANCES = ("euclidean", "cosine", "correlation")

METRIC_NAMES = (
    "cka-linear",
    "cka-rbf",
    "cka-linear-unbiased",
    "cka-rbf-unbiased",
    "cca",
    "svcca",
    "pwcca",
    "rv",
    "rsa",
    "procrustes",
    "mknn",
    "cycle-knn",
    "cknna",
)


@dataclass(frozen=True)
class MetricSpec:
    """Metric descriptor.

    Parameters
    ----------
    family : {'cka', 'cca', 'rv', 'rsa', 'procrustes', 'mknn', 'cycle-knn', 'cknna'}
    kernel : {'linear', 'rbf'}
        CKA only.
    sigma : float or None
        RBF bandwidth. ``None`` uses ``sigma_scale`` times the median pairwise
        Euclidean distance of each matrix.
    estimator : {'biased', 'unbiased'}
        HSIC estimator for CKA.
    variant : {'mean', 'svcca', 'pwcca'}
        CCA summary.
    variance_keep : float
        Spectral energy fraction kept by SVCCA, in (0, 1].
    k : int
        Neighbourhood size for mknn, cycle-knn and cknna.
    distance : {'euclidean', 'cosine', 'correlation'} or None
        ``None`` means correlation distance for RSA, Euclidean otherwise.
    """

    family: str
    kernel: str = "linear"
    sigma: float | None = None
    sigma_scale: float = 1.0
    estimator: str = "biased"
    variant: str = "mean"
    variance_keep: float = 0.99
    k: int = 10
    distance: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown metric family {self.family!r}; expected one of {FAMILIES}")
        if self.kernel not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.sigma_scale > 0:
            raise ValueError(f"sigma_scale must be > 0, got {self.sigma_scale}")
        if self.estimator not in ("biased", "unbiased"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.variant not in ("mean", "svcca", "pwcca"):
            raise ValueError(f"unknown CCA variant {self.variant!r}")
        if not 0 < self.variance_keep <= 1:
            raise ValueError(f"variance_keep must be in (0, 1], got {self.variance_keep}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.distance is not None and self.distance not in DISTANCES:
            raise ValueError(f"unknown distance {self.distance!r}; expected one of {DISTANCES}")

    @classmethod
    def from_name(cls, name: str, **params) -> "MetricSpec":
        """Build a spec from a short name such as ``'cka-rbf'`` or ``'mknn'``."""
        table = {
            "cka-linear": dict(family="cka"),
            "cka-rbf": dict(family="cka", kernel="rbf"),
            "cka-linear-unbiased": dict(family="cka", estimator="unbiased"),
            "cka-rbf-unbiased": dict(family="cka", kernel="rbf", estimator="unbiased"),
            "cca": dict(family="cca"),
            "svcca": dict(family="cca", variant="svcca"),
            "pwcca": dict(family="cca", variant="pwcca"),
            "rv": dict(family="rv"),
            "rsa": dict(family="rsa"),
            "procrustes": dict(family="procrustes"),
            "mknn": dict(family="mknn"),
            "cycle-knn": dict(family="cycle-knn"),
            "cknna": dict(family="cknna"),
        }
        if name not in table:
            raise ValueError(f"unknown metric {name!r}; valid names: {', '.join(METRIC_NAMES)}")
        params = {key: v for key, v in params.items() if v is not None}
        return cls(**{**table[name], **params})

    @property
    def name(self) -> str:
        if self.family == "cka":
            base = f"cka-{self.kernel}"
            return base + ("-unbiased" if self.estimator == "unbiased" else "")
        if self.family == "cca":
            return {"mean": "cca", "svcca": "svcca", "pwcca": "pwcca"}[self.variant]
        return self.family

    @property
    def s_max(self) -> float:
        # every implemented metric is bounded above by 1
        return 1.0

    @property
    def resolved_distance(self) -> str:
        if self.distance is not None:
            return self.distance
        return "correlation" if self.family == "rsa" else "euclidean"

    def with_params(self, **params) -> "MetricSpec":
        return replace(self, **params)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "family": self.family,
            "kernel": self.kernel,
            "sigma": self.sigma,
            "sigma_scale": self.sigma_scale,
            "estimator": self.estimator,
            "variant": self.variant,
            "variance_keep": self.variance_keep,
            "k": self.k,
            "distance": self.resolved_distance,
            "s_max": self.s_max,
        }


def as_spec(metric) -> MetricSpec:
    if isinstance(metric, MetricSpec):
        return metric
    if isinstance(metric, str):
        return MetricSpec.from_name(metric)
    raise TypeError(f"expected a MetricSpec or metric name, got {type(metric).__name__}")


# ---------------------------------------------------------------------------
# Kernels, Gram matrices and dissimilarities
# ---------------------------------------------------------------------------

def _sq_dists(X: np.ndarray) -> np.ndarray:
    D = X @ X.T
    sq = np.diag(D).copy()
    D *= -2.0
    D += sq[:, None]
    D += sq[None, :]
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def median_distance(X) -> float:
    """Median pairwise Euclidean distance over distinct sample pairs."""
    X = np.asarray(X, dtype=np.float64)
    D = _sq_dists(X)
    iu = np.triu_indices(X.shape[0], 1)
    return float(np.sqrt(np.median(D[iu])))


def gram(X, kernel: str = "linear", sigma: float | None = None, sigma_scale: float = 1.0) -> np.ndarray:
    """Uncentered Gram matrix ``K[i, j] = k(x_i, x_j)``.

    The RBF kernel is ``exp(-|x - x'|^2 / (2 sigma^2))``; with ``sigma=None``
    the bandwidth is ``sigma_scale`` times the median pairwise distance.
    """
    X = np.asarray(X, dtype=np.float64)
    if kernel == "linear":
        return X @ X.T
    if kernel != "rbf":
        raise ValueError(f"unknown kernel {kernel!r}")
    if sigma is not None and not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    D = _sq_dists(X)
    if sigma is None:
        iu = np.triu_indices(X.shape[0], 1)
        sigma = sigma_scale * float(np.sqrt(np.median(D[iu])))
        if not sigma > 0:
            raise DegenerateInputError("median pairwise distance is zero; RBF bandwidth undefined")
    K = np.exp(-D / (2.0 * sigma * sigma))
    np.fill_diagonal(K, 1.0)
    return K


def center_gram(K) -> np.ndarray:
    """Double-center a Gram matrix (``H K H``)."""
    K = np.asarray(K, dtype=np.float64)
    row = K.mean(axis=1, keepdims=True)
    col = K.mean(axis=0, keepdims=True)
    return K - row - col + K.mean()


def _unbiased_center(K: np.ndarray) -> np.ndarray:
    # U(K) with <U(K), U(L)> = n (n - 3) HSIC_u(K, L)
    n = K.shape[0]
    G = np.array(K, dtype=np.float64, copy=True)
    np.fill_diagonal(G, 0.0)
    means = G.sum(axis=0) / (n - 2)
    means -= means.sum() / (2 * (n - 1))
    G -= means[:, None]
    G -= means[None, :]
    np.fill_diagonal(G, 0.0)
    return G


def hsic_unbiased(K, L) -> float:
    """Unbiased HSIC estimator (U-statistic form) of two Gram matrices, n >= 4."""
    K = np.array(K, dtype=np.float64, copy=True)
    L = np.array(L, dtype=np.float64, copy=True)
    n = K.shape[0]
    if n < 4:
        raise ValueError(f"unbiased HSIC needs n >= 4, got {n}")
    np.fill_diagonal(K, 0.0)
    np.fill_diagonal(L, 0.0)
    Kr = K.sum(axis=1)
    Lr = L.sum(axis=1)
    term = np.vdot(K, L) + Kr.sum() * Lr.sum() / ((n - 1) * (n - 2)) - 2.0 / (n - 2) * Kr @ Lr
    return float(term / (n * (n - 3)))


def _pairwise(X: np.ndarray, distance: str) -> np.ndarray:
    if distance == "euclidean":
        return np.sqrt(_sq_dists(X))
    if distance == "correlation":
        X = X - X.mean(axis=1, keepdims=True)
        what = "row variance"
    elif distance == "cosine":
        what = "row norm"
    else:
        raise ValueError(f"unknown distance {distance!r}; expected one of {DISTANCES}")
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        i = int(np.flatnonzero(norms == 0)[0])
        raise DegenerateInputError(f"{distance} distance needs nonzero {what}; row {i} has none")
    Xn = X / norms[:, None]
    # snap rounding noise so exact ties (e.g. rows that are +-1 correlated)
    # stay ties under rescaling; distances live in [0, 2]
    D = np.round(np.clip(1.0 - Xn @ Xn.T, 0.0, 2.0), 12)
    np.fill_diagonal(D, 0.0)
    return D


def rdm(X, distance: str = "correlation") -> np.ndarray:
    """Representational dissimilarity matrix (n x n, zero diagonal)."""
    return _pairwise(as_embedding(X), distance)


# ---------------------------------------------------------------------------
# Spectral metrics
# ---------------------------------------------------------------------------

def _alignment(A: np.ndarray, B: np.ndarray) -> float:
    na = np.linalg.norm(A)
    nb = np.linalg.norm(B)
    if na == 0 or nb == 0:
        raise DegenerateInputError("zero-norm Gram matrix (constant representation)")
    return float(np.vdot(A, B) / (na * nb))


def cka(X, Y, kernel: str = "linear", *, estimator: str = "biased",
        sigma: float | None = None, sigma_scale: float = 1.0) -> float:
    """Centered kernel alignment.

    Linear biased CKA is ``|Xc' Yc|_F^2 / (|Xc' Xc|_F |Yc' Yc|_F)``. Kernel CKA
    aligns the double-centered Gram matrices; ``estimator='unbiased'`` swaps
    in the unbiased HSIC for numerator and denominator and may be negative.
    """
    X = as_embedding(X, "X")
    Y = as_embedding(Y, "Y")
    _check_rows(X, Y)
    if estimator == "unbiased":
        if X.shape[0] < 4:
            raise ValueError("unbiased CKA needs n >= 4")
        K = gram(X, kernel, sigma, sigma_scale)
        L = gram(Y, kernel, sigma, sigma_scale)
        hxx, hyy = hsic_unbiased(K, K), hsic_unbiased(L, L)
        if hxx <= 0 or hyy <= 0:
            raise DegenerateInputError("unbiased HSIC self-term is not positive")
        return float(np.clip(hsic_unbiased(K, L) / np.sqrt(hxx * hyy), -1.0, 1.0))
    if estimator != "biased":
        raise ValueError(f"unknown estimator {estimator!r}")
    if kernel == "linear":
        Xc, Yc = center(X), center(Y)
        n, dx, dy = Xc.shape[0], Xc.shape[1], Yc.shape[1]
        if dx * dy <= n * n:
            num = np.linalg.norm(Xc.T @ Yc) ** 2
            dxx, dyy = np.linalg.norm(Xc.T @ Xc), np.linalg.norm(Yc.T @ Yc)
            if dxx == 0 or dyy == 0:
                raise DegenerateInputError("constant representation: zero covariance")
            return float(np.clip(num / (dxx * dyy), 0.0, 1.0))
        return float(np.clip(_alignment(Xc @ Xc.T, Yc @ Yc.T), 0.0, 1.0))
    Kc = center_gram(gram(X, kernel, sigma, sigma_scale))
    Lc = center_gram(gram(Y, kernel, sigma, sigma_scale))
    return float(np.clip(_alignment(Kc, Lc), 0.0, 1.0))


def rv_coefficient(X, Y) -> float:
    """RV coefficient ``tr(Wx Wy) / sqrt(tr(Wx^2) tr(Wy^2))`` on centered inputs."""
    X = as_embedding(X, "X")
    Y = as_embedding(Y, "Y")
    _check_rows(X, Y)
    Xc, Yc = center(X), center(Y)
    return float(np.clip(_alignment(Xc @ Xc.T, Yc @ Yc.T), 0.0, 1.0))


def _rank_tol(s: np.ndarray, shape) -> float:
    if s.size == 0:
        return 0.0
    return float(s[0]) * max(shape) * np.finfo(np.float64).eps


@dataclass(frozen=True)
class _CcaState:
    F: np.ndarray          # n x r whitened basis (F F' = Wx Wx')
    Xc: np.ndarray | None  # centered data, PWCCA weights only


def _cca_state(X: np.ndarray, variant: str, variance_keep: float) -> _CcaState:
    Xc = center(X)
    n = Xc.shape[0]
    U, s, _ = np.linalg.svd(Xc, full_matrices=False)
    r = int(np.sum(s > _rank_tol(s, Xc.shape)))
    if r == 0:
        raise DegenerateInputError("rank collapse: constant representation")
    U, s = U[:, :r], s[:r]
    width = Xc.shape[1]
    if variant == "svcca":
        energy = np.cumsum(s ** 2) / np.sum(s ** 2)
        p = int(np.searchsorted(energy, variance_keep - 1e-12) + 1)
        p = min(p, r)
        U, s, width = U[:, :p], s[:p], p
    # Regularized whitening: Sigma + lam I with lam = 1e-8 tr(Sigma) / width,
    # written in the sample basis: Xc (Sigma + lam)^(-1/2) / sqrt(n-1) = U diag(c) V'.
    ev = s ** 2 / (n - 1)
    lam = 1e-8 * ev.sum() / width
    c = np.sqrt(ev / (ev + lam))
    return _CcaState(F=U * c, Xc=Xc if variant == "pwcca" else None)


def _cca_pair(sx: _CcaState, sy: _CcaState, variant: str) -> float:
    M = sx.F.T @ sy.F
    r = min(sx.F.shape[1], sy.F.shape[1])
    if variant != "pwcca":
        rho = np.linalg.svd(M, compute_uv=False)[:r]
        return float(np.clip(np.mean(np.clip(rho, 0.0, 1.0)), 0.0, 1.0))
    A, rho, _ = np.linalg.svd(M, full_matrices=False)
    rho = np.clip(rho[:r], 0.0, 1.0)
    H = sx.F @ A[:, :r]                       # canonical variables of X
    alpha = np.abs(H.T @ sx.Xc).sum(axis=1)
    if alpha.sum() == 0:
        raise DegenerateInputError("PWCCA weights are all zero")
    return float(np.clip(np.sum(alpha * rho) / np.sum(alpha), 0.0, 1.0))


def canonical_correlations(X, Y) -> np.ndarray:
    """Sample canonical correlations (descending), regularized whitening."""
    X = as_embedding(X, "X")
    Y = as_embedding(Y, "Y")
    _check_rows(X, Y)
    sx, sy = _cca_state(X, "mean", 1.0), _cca_state(Y, "mean", 1.0)
    r = min(sx.F.shape[1], sy.F.shape[1])
    return np.clip(np.linalg.svd(sx.F.T @ sy.F, compute_uv=False)[:r], 0.0, 1.0)


def cca_similarity(X, Y, variant: str = "mean", variance_keep: float = 0.99) -> float:
    """CCA-family similarity: mean canonical correlation, SVCCA or PWCCA.

    PWCCA is directional: its weights come from the canonical variables of `X`.
    """
    if variant not in ("mean", "svcca", "pwcca"):
        raise ValueError(f"unknown CCA variant {variant!r}")
    X = as_embedding(X, "X")
    Y = as_embedding(Y, "Y")
    _check_rows(X, Y)
    sx = _cca_state(X, variant, variance_keep)
    sy = _cca_state(Y, variant, variance_keep)
    return _cca_pair(sx, sy, variant)


# ---------------------------------------------------------------------------
# Geometric metrics
# ---------------------------------------------------------------------------

def _rank_matrix(D: np.ndarray) -> np.ndarray:
    n = D.shape[0]
    iu = np.triu_indices(n, 1)
    r = rankdata(D[iu])
    r -= r.mean()
    R = np.zeros((n, n))
    R[iu] = r
    return R + R.T


def rsa(X, Y, distance: str = "correlation") -> float:
    """Spearman correlation between the upper triangles of the two RDMs."""
    X = as_embedding(X, "X")
    Y = as_embedding(Y, "Y")
    _check_rows(X, Y)
    if X.shape[0] < 3:
        raise ValueError("RSA needs n >= 3")
    iu = np.triu_indices(X.shape[0], 1)
    rx = rankdata(_pairwise(X, distance)[iu])
    ry = rankdata(_pairwise(Y, distance)[iu])
    rx -= rx.mean()
    ry -= ry.mean()
    nx, ny = np.linalg.norm(rx), np.linalg.norm(ry)
    if nx == 0 or ny == 0:
        raise DegenerateInputError("constant RDM: rank correlation undefined")
    return float(np.clip(rx @ ry / (nx * ny), -1.0, 1.0))


def _procrustes_basis(X: np.ndarray) -> np.ndarray:
    Xc = center(X)
    nrm = np.linalg.norm(Xc)
    if nrm == 0:
        raise DegenerateInputError("constant representation: zero Frobenius norm")
    U, s, _ = np.linalg.svd(Xc / nrm, full_matrices=False)
    return U * s


def procrustes_similarity(X, Y) -> float:
    """Orthogonal Procrustes similarity ``1 - d^2 / (|X|^2 + |Y|^2)``.

    Inputs are centered and scaled to unit Frobenius norm, so the similarity
    equals the nuclear norm of ``X' Y``; it is 1 iff ``Y = X Q`` for some
    orthogonal ``Q`` up to centering and a common scale.
    """
    X = as_embedding(X, "X")
    Y = as_embedding(Y, "Y")
    _check_rows(X, Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"Procrustes needs equal widths, got {X.shape[1]} and {Y.shape[1]}")
    Fx, Fy = _procrustes_basis(X), _procrustes_basis(Y)
    return float(np.clip(np.linalg.svd(Fx.T @ Fy, compute_uv=False).sum(), 0.0, 1.0))


# ---------------------------------------------------------------------------
# Neighbourhood metrics
# ---------------------------------------------------------------------------

def _check_k(k: int, n: int):
    if not 1 <= k < n:
        raise ValueError(f"neighbourhood size k={k} must satisfy 1 <= k < n={n}")


def _knn_from_distances(D: np.ndarray, k: int) -> tuple[np.ndarray, bool]:
    """Neighbour table (ties by ascending index) and whether ties straddle rank k."""
    n = D.shape[0]
    D = D.copy()
    np.fill_diagonal(D, np.inf)
    rows = np.arange(n)
    if k >= n - 1:
        return np.argsort(D, axis=1, kind="stable")[:, :k], False
    # k + 1 smallest per row, then an exact (distance, index) sort of those
    cand = np.argpartition(D, k, axis=1)[:, :k + 1]
    dc = D[rows[:, None], cand]
    o = np.lexsort((cand, dc), axis=1)
    cand, dc = np.take_along_axis(cand, o, 1), np.take_along_axis(dc, o, 1)
    table = cand[:, :k].copy()
    tied = dc[:, k - 1] == dc[:, k]
    if tied.any():
        # an equal distance outside the candidate set may have a smaller index
        full = np.argsort(D[tied], axis=1, kind="stable")
        table[tied] = full[:, :k]
    return table, bool(tied.any())


def knn_sets(X, k: int, distance: str = "euclidean") -> np.ndarray:
    """Exact k-nearest-neighbour table, shape (n, k).

    Row ``i`` lists the neighbours of sample ``i`` (itself excluded) by
    increasing distance; equal distances are ordered by ascending index.
    """
    X = as_embedding(X)
    _check_k(k, X.shape[0])
    return _knn_from_distances(_pairwise(X, distance), k)[0]


def _directed_adjacency(table: np.ndarray) -> np.ndarray:
    n = table.shape[0]
    A = np.zeros((n, n), dtype=bool)
    A[np.arange(n)[:, None], table] = True
    return A


def knn_adjacency(X, k: int, distance: str = "euclidean") -> np.ndarray:
    """Symmetrized kNN graph: ``A[i, j] = 1`` iff j in N(i) or i in N(j)."""
    A = _directed_adjacency(knn_sets(X, k, distance))
    return (A | A.T).astype(np.float64)


def mutual_knn(X, Y, k: int = 10, distance: str = "euclidean") -> float:
    """Mean fraction of shared k-nearest neighbours per anchor."""
    return _knn_metric("mknn", X, Y, k, distance)


def cycle_knn(X, Y, k: int = 10, distance: str = "euclidean") -> float:
    """Overlap of mutual-neighbour (cycle) sets, normalized by the X-side set size."""
    return _knn_metric("cycle-knn", X, Y, k, distance)


def cknna(X, Y, k: int = 10, distance: str = "euclidean") -> float:
    """CKA of the double-centered symmetrized kNN adjacency matrices."""
    return _knn_metric("cknna", X, Y, k, distance)


def _knn_metric(kind, X, Y, k, distance):
    X = as_embedding(X, "X")
    Y = as_embedding(Y, "Y")
    _check_rows(X, Y)
    sc = _KnnScorer(kind, k, distance)
    return sc.pair(sc.prepare(X), sc.prepare(Y))


def _check_rows(X: np.ndarray, Y: np.ndarray):
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"row counts differ: {X.shape[0]} vs {Y.shape[0]}")


# ---------------------------------------------------------------------------
# Scorers
# ---------------------------------------------------------------------------

class Scorer:
    """Prepared-state evaluation of one metric (see module docstring)."""

    lower = 0.0
    upper = 1.0

    def prepare(self, X: np.ndarray):
        raise NotImplementedError

    def permute(self, state, perm: np.ndarray):
        raise NotImplementedError

    def pair(self, sx, sy) -> float:
        raise NotImplementedError

    def prepare_stack(self, layers: Sequence[np.ndarray]):
        return [self.prepare(L) for L in layers]

    def score_matrix(self, sa, sb, perm: np.ndarray | None = None) -> np.ndarray:
        if perm is not None:
            sb = [self.permute(s, perm) for s in sb]
        return np.array([[self.pair(x, y) for y in sb] for x in sa], dtype=np.float64)


class _AlignmentScorer(Scorer):
    """Metrics of the form <Gx, Gy> with unit-norm symmetric n x n states.

    Stacks are kept flattened, so a layer-pair matrix is one matrix product.
    """

    def __init__(self, build: Callable[[np.ndarray], np.ndarray], lower: float = 0.0):
        self.build = build
        self.lower = lower

    def prepare(self, X):
        G = self.build(X)
        nrm = np.linalg.norm(G)
        if nrm == 0:
            raise DegenerateInputError("zero-norm centered Gram matrix (constant representation)")
        return G / nrm

    def permute(self, state, perm):
        return state.take(perm, axis=0).take(perm, axis=1)

    def pair(self, sx, sy):
        return float(self.score_matrix(self.prepare_stack_states([sx]),
                                       self.prepare_stack_states([sy]))[0, 0])

    def prepare_stack_states(self, states):
        n = states[0].shape[0]
        return np.stack([s.reshape(n * n) for s in states]), n

    def prepare_stack(self, layers):
        return self.prepare_stack_states([self.prepare(L) for L in layers])

    def score_matrix(self, sa, sb, perm=None):
        FA, n = sa
        FB, nb = sb
        if n != nb:
            raise ValueError(f"row counts differ: {n} vs {nb}")
        if perm is not None:
            perm = np.asarray(perm, dtype=np.intp)
            idx = (perm[:, None] * n + perm[None, :]).reshape(-1)
            FB = FB.take(idx, axis=1)
        return np.clip(FA @ FB.T, self.lower, self.upper)


@dataclass(frozen=True)
class _KnnState:
    table: np.ndarray
    D: np.ndarray | None   # kept only when ties straddle rank k
    derived: np.ndarray


class _KnnScorer(Scorer):
    def __init__(self, kind: str, k: int, distance: str):
        self.kind = kind
        self.k = k
        self.distance = distance
        self.lower = -1.0 if kind == "cknna" else 0.0

    def _derive(self, table):
        A = _directed_adjacency(table)
        if self.kind == "mknn":
            return A
        if self.kind == "cycle-knn":
            return A & A.T
        G = center_gram((A | A.T).astype(np.float64))
        nrm = np.linalg.norm(G)
        if nrm == 0:
            raise DegenerateInputError("zero-norm centered adjacency")
        return G / nrm

    def _from_distances(self, D):
        table, ties = _knn_from_distances(D, self.k)
        return _KnnState(table, D if ties else None, self._derive(table))

    def prepare(self, X):
        _check_k(self.k, X.shape[0])
        # squared Euclidean distances give the same neighbour order and ties
        D = _sq_dists(X) if self.distance == "euclidean" else _pairwise(X, self.distance)
        return self._from_distances(D)

    def permute(self, state, perm):
        perm = np.asarray(perm, dtype=np.intp)
        if state.D is not None:
            # boundary ties: the index tie-break depends on the labelling
            return self._from_distances(state.D[np.ix_(perm, perm)])
        table = inverse_permutation(perm)[state.table[perm]]
        return _KnnState(table, None, self._derive(table))

    def pair(self, sx, sy):
        n = sx.table.shape[0]
        if sy.table.shape[0] != n:
            raise ValueError(f"row counts differ: {n} vs {sy.table.shape[0]}")
        if self.kind == "mknn":
            hits = sx.derived[np.arange(n)[:, None], sy.table].sum()
            return float(hits / (n * self.k))
        if self.kind == "cycle-knn":
            inter = (sx.derived & sy.derived).sum(axis=1)
            size = np.maximum(sx.derived.sum(axis=1), 1)
            return float(np.mean(inter / size))
        return float(np.clip(np.vdot(sx.derived, sy.derived), -1.0, 1.0))


class _CcaScorer(Scorer):
    def __init__(self, variant, variance_keep):
        self.variant = variant
        self.variance_keep = variance_keep

    def prepare(self, X):
        return _cca_state(X, self.variant, self.variance_keep)

    def permute(self, state, perm):
        return _CcaState(state.F[perm], None if state.Xc is None else state.Xc[perm])

    def pair(self, sx, sy):
        return _cca_pair(sx, sy, self.variant)


class _ProcrustesScorer(Scorer):
    def prepare(self, X):
        return X.shape[1], _procrustes_basis(X)

    def permute(self, state, perm):
        return state[0], state[1][perm]

    def pair(self, sx, sy):
        if sx[0] != sy[0]:
            raise ValueError(f"Procrustes needs equal widths, got {sx[0]} and {sy[0]}")
        return float(np.clip(np.linalg.svd(sx[1].T @ sy[1], compute_uv=False).sum(), 0.0, 1.0))


def _rsa_build(distance):
    def build(X):
        if X.shape[0] < 3:
            raise ValueError("RSA needs n >= 3")
        R = _rank_matrix(_pairwise(X, distance))
        if not np.any(R):
            raise DegenerateInputError("constant RDM: rank correlation undefined")
        return R
    return build


def make_scorer(metric) -> Scorer:
    """Prepared-state scorer for a :class:`MetricSpec` (or metric name)."""
    spec = as_spec(metric)
    fam = spec.family
    if fam == "cka":
        def base(X):
            return gram(X, spec.kernel, spec.sigma, spec.sigma_scale)
        if spec.estimator == "unbiased":
            def build(X):
                if X.shape[0] < 4:
                    raise ValueError("unbiased CKA needs n >= 4")
                return _unbiased_center(base(X))
            return _AlignmentScorer(build, lower=-1.0)
        if spec.kernel == "linear":
            return _AlignmentScorer(lambda X: (lambda Xc: Xc @ Xc.T)(center(X)))
        return _AlignmentScorer(lambda X: center_gram(base(X)))
    if fam == "rv":
        return _AlignmentScorer(lambda X: (lambda Xc: Xc @ Xc.T)(center(X)))
    if fam == "rsa":
        return _AlignmentScorer(_rsa_build(spec.resolved_distance), lower=-1.0)
    if fam == "cca":
        return _CcaScorer(spec.variant, spec.variance_keep)
    if fam == "procrustes":
        return _ProcrustesScorer()
    return _KnnScorer(fam, spec.k, spec.resolved_distance)


def similarity(X, Y, metric) -> float:
    """Evaluate the metric described by `metric` (spec or name) on ``(X, Y)``."""
    spec = as_spec(metric)
    X = as_embedding(X, "X")
    Y = as_embedding(Y, "Y")
    _check_rows(X, Y)
    fam = spec.family
    if fam == "cka":
        return cka(X, Y, spec.kernel, estimator=spec.estimator,
                   sigma=spec.sigma, sigma_scale=spec.sigma_scale)
    if fam == "rv":
        return rv_coefficient(X, Y)
    if fam == "rsa":
        return rsa(X, Y, spec.resolved_distance)
    if fam == "cca":
        return cca_similarity(X, Y, spec.variant, spec.variance_keep)
    if fam == "procrustes":
        return procrustes_similarity(X, Y)
    return _knn_metric(fam, X, Y, spec.k, spec.resolved_distance)
