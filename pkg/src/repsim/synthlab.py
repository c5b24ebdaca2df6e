"""Synthetic experiments on width and depth confounding.

Generators draw null (independent) or signal-bearing pairs of embeddings, and
runners sweep configurations, returning :class:`ExperimentTable` objects that
serialize to CSV or JSON.

Every trial derives its own seed from the run seed and its grid coordinates,
so tables do not depend on ``n_jobs`` or on trial scheduling.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .calibration import (
    critical_index,
    entrywise_calibrated,
    null_similarity_matrices,
)
from .core import derive_seed, n_jobs_default
from .metrics import MetricSpec, as_spec

__all__ = [
    "DatasetSpec",
    "ExperimentTable",
    "draw_noise",
    "generate_dataset",
    "generate_stack",
    "calibration_variants",
    "run_null_drift",
    "run_guarantees",
    "run_depth_confounder",
    "run_permutation_budget",
    "run_calibration_variants",
    "RUNNERS",
]

NOISE_FAMILIES = ("gaussian", "student_t", "laplace", "gaussian_mixture")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def draw_noise(rng: np.random.Generator, shape, noise: str = "gaussian",
               df: float = 3.0, separation: float = 4.0) -> np.ndarray:
    """I.i.d. zero-mean, unit-variance entries from the named family.

    ``student_t`` is scaled by ``sqrt((df - 2) / df)``; ``laplace`` has scale
    ``1/sqrt(2)``; ``gaussian_mixture`` is an equal-weight mixture of unit
    normals at ``+-separation/2``, rescaled to unit variance.
    """
    if noise == "gaussian":
        return rng.standard_normal(shape)
    if noise == "student_t":
        if not df > 2:
            raise ValueError(f"student_t needs df > 2 for finite variance, got {df}")
        return rng.standard_t(df, size=shape) * math.sqrt((df - 2) / df)
    if noise == "laplace":
        return rng.laplace(0.0, 1.0 / math.sqrt(2.0), size=shape)
    if noise == "gaussian_mixture":
        if separation < 0:
            raise ValueError(f"separation must be >= 0, got {separation}")
        half = separation / 2
        signs = np.where(rng.random(shape) < 0.5, -half, half)
        return (signs + rng.standard_normal(shape)) / math.sqrt(1 + half * half)
    raise ValueError(f"unknown noise family {noise!r}; expected one of {NOISE_FAMILIES}")


@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic pair specification.

    Under ``H1``, ``X = s Z Px' + sigma Ex`` and ``Y = s Z Py' + sigma Ey``
    with a shared n x r standard-normal factor ``Z`` and random orthonormal
    loadings ``Px`` (d_x x r) and ``Py`` (d_y x r).
    """

    hypothesis: str = "H0"
    n: int = 256
    d_x: int = 512
    d_y: int | None = None
    noise: str = "gaussian"
    df: float = 3.0
    separation: float = 4.0
    rank: int = 5
    signal_strength: float = 1.0
    noise_level: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.hypothesis not in ("H0", "H1"):
            raise ValueError(f"hypothesis must be 'H0' or 'H1', got {self.hypothesis!r}")
        if self.n < 2 or self.d_x < 1 or self.dy < 1:
            raise ValueError("need n >= 2 and positive widths")
        if self.noise not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.noise!r}")
        if self.noise == "student_t" and not self.df > 2:
            raise ValueError("student_t needs df > 2")
        if self.hypothesis == "H1":
            if not 1 <= self.rank <= min(self.d_x, self.dy):
                raise ValueError(f"rank must be in 1..{min(self.d_x, self.dy)}, got {self.rank}")
            if self.signal_strength < 0 or self.noise_level < 0:
                raise ValueError("signal_strength and noise_level must be >= 0")

    @property
    def dy(self) -> int:
        return self.d_x if self.d_y is None else self.d_y


def _orthonormal(rng, d, r):
    Q, R = np.linalg.qr(rng.standard_normal((d, r)))
    return Q * np.sign(np.diag(R))


def generate_dataset(spec: DatasetSpec) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(X, Y)`` for a :class:`DatasetSpec`; deterministic in ``spec.seed``."""
    n, dx, dy = spec.n, spec.d_x, spec.dy
    rx, ry = _rng(derive_seed(spec.seed, 0)), _rng(derive_seed(spec.seed, 1))
    Ex = draw_noise(rx, (n, dx), spec.noise, spec.df, spec.separation)
    Ey = draw_noise(ry, (n, dy), spec.noise, spec.df, spec.separation)
    if spec.hypothesis == "H0":
        return Ex, Ey
    rs = _rng(derive_seed(spec.seed, 2))
    Z = rs.standard_normal((n, spec.rank))
    Px = _orthonormal(rs, dx, spec.rank)
    Py = _orthonormal(rs, dy, spec.rank)
    s, sig = spec.signal_strength, spec.noise_level
    return s * (Z @ Px.T) + sig * Ex, s * (Z @ Py.T) + sig * Ey


def generate_stack(L: int, n: int, d: int, noise: str = "gaussian", seed: int = 0) -> list[np.ndarray]:
    """L independent n x d null layers."""
    return [draw_noise(_rng(derive_seed(seed, l)), (n, d), noise) for l in range(L)]


class ExperimentTable:
    """Column-oriented result table with run metadata."""

    def __init__(self, columns: dict[str, list], metadata: dict | None = None):
        lengths = {len(v) for v in columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"columns have unequal lengths {sorted(lengths)}")
        self.columns = {k: list(v) for k, v in columns.items()}
        self.metadata = dict(metadata or {})

    @classmethod
    def from_rows(cls, rows: Sequence[dict], metadata: dict | None = None) -> "ExperimentTable":
        names = list(rows[0]) if rows else []
        return cls({k: [r[k] for r in rows] for k in names}, metadata)

    def __len__(self):
        return len(next(iter(self.columns.values()), []))

    def __getitem__(self, name):
        return self.columns[name]

    def rows(self) -> list[dict]:
        names = list(self.columns)
        return [dict(zip(names, vals)) for vals in zip(*self.columns.values())]

    def where(self, **conds) -> list[dict]:
        return [r for r in self.rows() if all(r[k] == v for k, v in conds.items())]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(list(self.columns))
        for row in zip(*self.columns.values()):
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_json(self, path=None) -> str:
        text = json.dumps({"metadata": self.metadata, "columns": self.columns}, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, text: str) -> "ExperimentTable":
        doc = json.loads(text)
        return cls(doc["columns"], doc.get("metadata"))


def _metadata(runner: str, config: dict) -> dict:
    canon = json.dumps(config, sort_keys=True, default=str)
    digest = hashlib.sha1(canon.encode()).hexdigest()[:10]
    return {
        "runner": runner,
        "config": json.loads(canon),
        "seed": config.get("seed"),
        "K": config.get("K"),
        "alpha": config.get("alpha"),
        "provenance": f"repsim {__version__} {runner} cfg:{digest}",
    }


def _parallel(fn, args: list, n_jobs: int | None):
    n_jobs = n_jobs_default() if n_jobs is None else max(1, int(n_jobs))
    if n_jobs == 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(*a) for a in args)


def _specs(metrics) -> list[MetricSpec]:
    return [as_spec(m) for m in metrics]


def _tau(s_obs, nulls, alpha):
    idx = critical_index(len(nulls), alpha)
    return float(np.sort(np.concatenate(([s_obs], nulls)))[idx - 1])


def _gate(s_obs, tau, s_max):
    if tau >= s_max:
        return 0.0
    return max((s_obs - tau) / (s_max - tau), 0.0)


def _p(s_obs, nulls):
    return (1 + int(np.count_nonzero(nulls >= s_obs))) / (len(nulls) + 1)


def _mean_std(v):
    v = np.asarray(v, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def _pair_trial(dspec: DatasetSpec, specs, K: int, perm_seed: int):
    """One dataset, all metrics: list of (s_obs, null_scores)."""
    X, Y = generate_dataset(dspec)
    out = []
    for i, spec in enumerate(specs):
        S, S_null = null_similarity_matrices([X], [Y], spec, K, derive_seed(perm_seed, i), n_jobs=1)
        out.append((float(S[0, 0]), S_null[:, 0, 0].copy()))
    return out


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

def run_null_drift(n_list: Iterable[int] = (128, 256, 512), d_list: Iterable[int] = (128, 512, 1024),
                   metrics: Sequence = ("cka-linear", "cka-rbf", "rsa", "mknn"),
                   noise: str = "gaussian", K: int = 99, alpha: float = 0.05,
                   trials: int = 200, seed: int = 0, n_jobs: int | None = None) -> ExperimentTable:
    """Raw vs calibrated scores under H0 across an (n, d) grid."""
    n_list, d_list = list(n_list), list(d_list)
    if not n_list or not d_list or not metrics:
        raise ValueError("grid must be non-empty")
    specs = _specs(metrics)
    cells = [(n, d) for n in n_list for d in d_list]
    args = []
    for ci, (n, d) in enumerate(cells):
        for t in range(trials):
            ts = derive_seed(seed, ci, t)
            args.append((DatasetSpec("H0", n, d, noise=noise, seed=derive_seed(ts, 0)),
                         specs, K, derive_seed(ts, 1)))
    results = _parallel(_pair_trial, args, n_jobs)
    rows = []
    for ci, (n, d) in enumerate(cells):
        chunk = results[ci * trials:(ci + 1) * trials]
        for mi, spec in enumerate(specs):
            raw, cal, rej = [], [], []
            for trial in chunk:
                s, nulls = trial[mi]
                tau = _tau(s, nulls, alpha)
                raw.append(s)
                cal.append(_gate(s, tau, spec.s_max))
                rej.append(_p(s, nulls) <= alpha)
            rm, rs = _mean_std(raw)
            cm, cs = _mean_std(cal)
            rows.append(dict(metric=spec.name, noise=noise, n=n, d=d, d_over_n=d / n,
                             trials=trials, raw_mean=rm, raw_std=rs, cal_mean=cm, cal_std=cs,
                             rejection_rate=float(np.mean(rej))))
    cfg = dict(n_list=n_list, d_list=d_list, metrics=[s.name for s in specs], noise=noise,
               K=K, alpha=alpha, trials=trials, seed=seed)
    return ExperimentTable.from_rows(rows, _metadata("nulldrift", cfg))


def run_guarantees(configs: Sequence[tuple[int, int]] = ((256, 512),),
                   metrics: Sequence = ("cka-linear", "mknn"), K: int = 99,
                   alpha=(0.01, 0.05, 0.1), trials: int = 200,
                   signal_strengths: Sequence[float] = (0.25, 0.5, 1.0, 2.0, 4.0),
                   noise_levels: Sequence[float] = (1.0,), ranks: Sequence[int] = (5,),
                   power_config: tuple[int, int] = (256, 256), seed: int = 0,
                   n_jobs: int | None = None) -> ExperimentTable:
    """Type-I error under H0 per (n, d) and detection power under H1 per SNR cell.

    `alpha` may be a single level or a sequence; one p-value per trial is
    thresholded at every level. ``type1_bound`` is ``alpha + 3 sqrt(alpha (1-alpha) / trials)``.
    """
    alphas = [alpha] if isinstance(alpha, (int, float)) else list(alpha)
    specs = _specs(metrics)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    jobs = []
    for ci, (n, d) in enumerate(configs):
        jobs.append(("type1", n, d, 0, 0.0, 0.0, ci))
    pn, pd = power_config
    gi = 0
    for r in ranks:
        for s in signal_strengths:
            for sig in noise_levels:
                jobs.append(("power", pn, pd, r, float(s), float(sig), len(configs) + gi))
                gi += 1
    args = []
    for kind, n, d, r, s, sig, ci in jobs:
        for t in range(trials):
            ts = derive_seed(seed, ci, t)
            if kind == "type1":
                ds = DatasetSpec("H0", n, d, seed=derive_seed(ts, 0))
            else:
                ds = DatasetSpec("H1", n, d, rank=r, signal_strength=s, noise_level=sig,
                                 seed=derive_seed(ts, 0))
            args.append((ds, specs, K, derive_seed(ts, 1)))
    results = _parallel(_pair_trial, args, n_jobs)
    rows = []
    for ji, (kind, n, d, r, s, sig, _) in enumerate(jobs):
        chunk = results[ji * trials:(ji + 1) * trials]
        for mi, spec in enumerate(specs):
            obs = [tr[mi] for tr in chunk]
            raw = [o[0] for o in obs]
            pv = np.array([_p(o[0], o[1]) for o in obs])
            for a in alphas:
                cal = [_gate(o[0], _tau(o[0], o[1], a), spec.s_max) for o in obs]
                cm, cs = _mean_std(cal)
                rows.append(dict(kind=kind, metric=spec.name, n=n, d=d, alpha=a, rank=r,
                                 signal_strength=s, noise_level=sig, trials=trials,
                                 rejection_rate=float(np.mean(pv <= a)),
                                 type1_bound=a + 3 * math.sqrt(a * (1 - a) / trials),
                                 raw_mean=float(np.mean(raw)), cal_mean=cm, cal_std=cs))
    cfg = dict(configs=[list(c) for c in configs], metrics=[s.name for s in specs], K=K,
               alpha=alphas, trials=trials, signal_strengths=list(signal_strengths),
               noise_levels=list(noise_levels), ranks=list(ranks),
               power_config=list(power_config), seed=seed)
    return ExperimentTable.from_rows(rows, _metadata("guarantees", cfg))


def _depth_trial(L, n, d, spec, K, alpha, aggregator, data_seed, perm_seed):
    A = generate_stack(L, n, d, seed=derive_seed(data_seed, 0))
    B = generate_stack(L, n, d, seed=derive_seed(data_seed, 1))
    S, S_null = null_similarity_matrices(A, B, spec, K, perm_seed, n_jobs=1)
    if aggregator == "max":
        T_obs, nulls = float(S.max()), S_null.max(axis=(1, 2))
    else:
        T_obs, nulls = float(S.mean()), S_null.mean(axis=(1, 2))
    tau = _tau(T_obs, nulls, alpha)
    naive = entrywise_calibrated(S, S_null, alpha, spec.s_max)
    return dict(raw=T_obs, agg_cal=_gate(T_obs, tau, spec.s_max),
                agg_rej=_p(T_obs, nulls) <= alpha, naive=float(naive.max()),
                naive_rej=bool(np.any(naive > 0)), pair_mean=float(S.mean()),
                pair_sq=float(np.mean(S ** 2)))


def run_depth_confounder(L_list: Iterable[int] = (1, 4, 16, 64), n: int = 128, d_over_n: float = 8,
                         metric="cka-linear", K: int = 99, alpha: float = 0.05,
                         trials: int = 100, seed: int = 0, aggregator: str = "max",
                         n_jobs: int | None = None) -> ExperimentTable:
    """Raw, aggregation-aware and naive entrywise-calibrated max under H0 stacks.

    Both models have L layers, so M = L^2 layer pairs are searched.
    """
    L_list = list(L_list)
    if any(not 1 <= L <= 128 for L in L_list):
        raise ValueError("layer counts must lie in 1..128")
    if aggregator not in ("max", "mean"):
        raise ValueError("aggregator must be 'max' or 'mean'")
    spec = as_spec(metric)
    d = int(round(n * d_over_n))
    args = []
    for li, L in enumerate(L_list):
        for t in range(trials):
            ts = derive_seed(seed, li, t)
            args.append((L, n, d, spec, K, alpha, aggregator, derive_seed(ts, 0), derive_seed(ts, 1)))
    results = _parallel(_depth_trial, args, n_jobs)
    rows = []
    for li, L in enumerate(L_list):
        chunk = results[li * trials:(li + 1) * trials]
        col = {key: np.array([c[key] for c in chunk], dtype=np.float64) for key in chunk[0]}
        pair_mean = float(col["pair_mean"].mean())
        pair_std = math.sqrt(max(float(col["pair_sq"].mean()) - pair_mean ** 2, 0.0))
        M = L * L
        bound = pair_mean + 3 * pair_std * math.sqrt(math.log(M)) if M >= 2 else pair_mean
        rm, rs = _mean_std(col["raw"])
        am, as_ = _mean_std(col["agg_cal"])
        nm, ns = _mean_std(col["naive"])
        rows.append(dict(L=L, M=M, n=n, d=d, metric=spec.name, aggregator=aggregator,
                         trials=trials, raw_max_mean=rm, raw_max_std=rs,
                         agg_cal_mean=am, agg_cal_std=as_,
                         agg_rejection_rate=float(col["agg_rej"].mean()),
                         naive_cal_max_mean=nm, naive_cal_max_std=ns,
                         naive_rejection_rate=float(col["naive_rej"].mean()),
                         pair_mean=pair_mean, pair_std=pair_std, inflation_bound=bound))
    cfg = dict(L_list=L_list, n=n, d_over_n=d_over_n, metric=spec.name, K=K, alpha=alpha,
               trials=trials, seed=seed, aggregator=aggregator)
    return ExperimentTable.from_rows(rows, _metadata("depth", cfg))


def run_permutation_budget(K_list: Sequence[int] = (10, 25, 50, 100, 200), n: int = 256,
                           d: int = 512, metric="cka-linear", seeds: int = 50,
                           alpha: float = 0.05, seed: int = 0,
                           n_jobs: int | None = None) -> ExperimentTable:
    """Across-seed stability of the critical value and calibrated score vs K.

    One H0 pair is drawn from `seed`; each of `seeds` permutation streams then
    calibrates it, so the spread of ``tau`` is pure Monte-Carlo error.
    Replicate k of a plan does not depend on K, so the K-replicate null is the
    first K replicates of the largest budget.
    """
    K_list = [int(k) for k in K_list]
    if not K_list or K_list != sorted(K_list) or K_list[0] < 1:
        raise ValueError("K_list must be non-empty, ascending and positive")
    if seeds < 2:
        raise ValueError("seeds must be >= 2 to estimate a spread")
    spec = as_spec(metric)
    Kmax = K_list[-1]
    ds = DatasetSpec("H0", n, d, seed=derive_seed(seed, 0))
    args = [(ds, [spec], Kmax, derive_seed(seed, 1, s)) for s in range(seeds)]
    results = [r[0] for r in _parallel(_pair_trial, args, n_jobs)]
    rows = []
    for K in K_list:
        taus, cals, rej = [], [], []
        for s_obs, nulls in results:
            tau = _tau(s_obs, nulls[:K], alpha)
            taus.append(tau)
            cals.append(_gate(s_obs, tau, spec.s_max))
            rej.append(_p(s_obs, nulls[:K]) <= alpha)
        tm, ts = _mean_std(taus)
        cm, cs = _mean_std(cals)
        rows.append(dict(K=K, metric=spec.name, n=n, d=d, seeds=seeds, tau_mean=tm, tau_std=ts,
                         cal_mean=cm, cal_std=cs, rejection_rate=float(np.mean(rej))))
    cfg = dict(K_list=K_list, n=n, d=d, metric=spec.name, seeds=seeds, alpha=alpha, seed=seed, K=Kmax)
    return ExperimentTable.from_rows(rows, _metadata("budget", cfg))


VARIANTS = ("gated", "null-centered", "z-score", "ari")


def calibration_variants(s_obs: float, null_scores, s_max: float = 1.0,
                         alpha: float = 0.05) -> dict[str, float | None]:
    """Four null corrections of one score; ``None`` marks an undefined z-score."""
    nulls = np.asarray(null_scores, dtype=np.float64)
    mu = float(nulls.mean())
    sd = float(nulls.std(ddof=1)) if nulls.size > 1 else 0.0
    tau = _tau(s_obs, nulls, alpha)
    return {
        "gated": _gate(s_obs, tau, s_max),
        "null-centered": s_obs - mu,
        "z-score": (s_obs - mu) / sd if sd > 0 else None,
        "ari": (s_obs - mu) / (s_max - mu) if s_max > mu else None,
    }


def run_calibration_variants(n: int = 128, d_over_n: Sequence[float] = (0.5, 1, 2, 4, 8),
                             metrics: Sequence = ("cka-linear", "cka-rbf", "rsa", "mknn"),
                             K: int = 99, alpha: float = 0.05, trials: int = 50, seed: int = 0,
                             n_jobs: int | None = None) -> ExperimentTable:
    """Mean H0 score after each correction (gated, null-centered, z-score, ARI-style).

    Undefined corrections are counted in ``flagged`` and left out of the mean.
    """
    specs = _specs(metrics)
    ratios = list(d_over_n)
    args = []
    for ri, r in enumerate(ratios):
        for t in range(trials):
            ts = derive_seed(seed, ri, t)
            args.append((DatasetSpec("H0", n, max(1, int(round(n * r))), seed=derive_seed(ts, 0)),
                         specs, K, derive_seed(ts, 1)))
    results = _parallel(_pair_trial, args, n_jobs)
    rows = []
    for ri, r in enumerate(ratios):
        chunk = results[ri * trials:(ri + 1) * trials]
        for mi, spec in enumerate(specs):
            per = [calibration_variants(tr[mi][0], tr[mi][1], spec.s_max, alpha) for tr in chunk]
            raw_mean = float(np.mean([tr[mi][0] for tr in chunk]))
            for v in VARIANTS:
                vals = [p[v] for p in per if p[v] is not None]
                flagged = len(per) - len(vals)
                m, s = _mean_std(vals) if vals else (0.0, 0.0)
                rows.append(dict(metric=spec.name, n=n, d_over_n=float(r), variant=v,
                                 trials=trials, raw_mean=raw_mean, mean=m, std=s, flagged=flagged))
    cfg = dict(n=n, d_over_n=ratios, metrics=[s.name for s in specs], K=K, alpha=alpha,
               trials=trials, seed=seed)
    return ExperimentTable.from_rows(rows, _metadata("variants", cfg))


RUNNERS = {
    "nulldrift": run_null_drift,
    "guarantees": run_guarantees,
    "depth": run_depth_confounder,
    "budget": run_permutation_budget,
    "variants": run_calibration_variants,
}


def dataset_spec_dict(spec: DatasetSpec) -> dict:
    return asdict(spec)
