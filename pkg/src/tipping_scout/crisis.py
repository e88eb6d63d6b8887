"""Post-training analysis of closed-loop predictions.

Classifies predicted trajectories as sustained chaos or collapse, locates
the critical parameter value by per-member bisection over an ensemble of
independently built and trained reservoirs, collects transient-lifetime
distributions beyond the critical point, fits exponentials to them, and
extracts return maps from local minima.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import chi2

from .dynsys import EscapeRegion, TimeSeries, escape_time
from .reservoir import HyperParams, Prediction, Reservoir, TrainingCorpus

__all__ = [
    "EnsembleSpec",
    "MemberEstimate",
    "CrisisEstimate",
    "LifetimeSamples",
    "ExponentialFit",
    "ReturnMap",
    "EnsembleUnhealthy",
    "classify",
    "estimate_critical_point",
    "lifetime_distribution",
    "fit_exponential",
    "return_map",
]


class EnsembleUnhealthy(RuntimeError):
    """Raised when more than 20% of ensemble members had to be excluded."""

    def __init__(self, excluded: int, total: int):
        super().__init__(f"ensemble unhealthy: {excluded}/{total} members excluded")
        self.excluded = excluded
        self.total = total


@dataclass(frozen=True)
class EnsembleSpec:
    """Reservoir ensemble description: shared hyperparameters, member seeds."""

    hyper: HyperParams
    n_members: int
    base_seed: int = 0
    seeds: Optional[Sequence[int]] = None

    def member_seeds(self) -> list:
        if self.seeds is not None:
            if len(self.seeds) != self.n_members:
                raise ValueError("seeds must list one seed per member")
            return list(self.seeds)
        return [self.base_seed + i for i in range(self.n_members)]


@dataclass
class MemberEstimate:
    member: int
    seed: int
    estimate: float          # NaN for excluded members
    flag: str = ""           # "", "saturated_low", "saturated_high", "excluded"


@dataclass
class CrisisEstimate:
    """Ensemble mean and spread of the predicted critical parameter."""

    mean: float
    std: float
    n: int
    per_member: np.ndarray
    members: list = field(default_factory=list)   # MemberEstimate records
    n_excluded: int = 0

    @property
    def sem(self) -> float:
        return self.std / math.sqrt(self.n) if self.n > 0 else math.nan


@dataclass
class LifetimeSamples:
    """Escape times pooled over members and initial conditions."""

    lifetimes: np.ndarray
    censored: int
    horizon: float
    tau: Optional[float] = None
    per_run: list = field(default_factory=list)   # (member, ic, lifetime, censored)


@dataclass
class ExponentialFit:
    tau: float
    ci_low: float
    ci_high: float
    shift: float
    n: int


@dataclass
class ReturnMap:
    """Consecutive pairs (m_k, m_{k+1}) of local minima of one coordinate."""

    pairs: np.ndarray

    def __len__(self) -> int:
        return self.pairs.shape[0]


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def classify(
    pred: Union[Prediction, TimeSeries], region: EscapeRegion, t_max: float
) -> Optional[float]:
    """Collapse lifetime of a predicted trajectory, or None if sustained.

    Wraps escape_time; a prediction that diverged (non-finite output)
    counts as collapse at the divergence time.
    """
    if isinstance(pred, Prediction):
        series, diverged = pred.series, pred.diverged
    else:
        series, diverged = pred, False
    lifetime = escape_time(series, region, t_max) if len(series) else None
    if lifetime is None and diverged:
        t_div = len(series) * series.dt
        if t_div <= t_max:
            lifetime = t_div
    return lifetime


# ---------------------------------------------------------------------------
# Ensemble critical-point estimation
# ---------------------------------------------------------------------------

def _draw_warmup(
    rng: np.random.Generator,
    pool: np.ndarray,
    span: np.ndarray,
    length: int,
    dt: float,
    b: float,
    noise_frac: float,
) -> TimeSeries:
    """Random attractor segment, jittered by a fraction of each range."""
    i0 = int(rng.integers(0, pool.shape[0] - length + 1))
    seg = pool[i0 : i0 + length]
    if noise_frac > 0.0:
        seg = seg + rng.uniform(-1.0, 1.0, seg.shape) * (noise_frac * span)
    return TimeSeries(dt, seg, b)


def _member_bisection(task) -> MemberEstimate:
    (member, seed, hyper, corpus, b_lo, b_hi, resolution, t_max, region,
     n_votes, warmup_pool, warmup_length, noise_frac) = task
    res = Reservoir.build(hyper, corpus.dim, seed).train(corpus)
    rng = np.random.default_rng([seed, 101])
    steps = int(round(t_max / corpus.dt))
    span = warmup_pool.max(axis=0) - warmup_pool.min(axis=0)
    saw_finite = False

    def majority_collapse(b: float) -> bool:
        nonlocal saw_finite
        collapses = 0
        for _ in range(n_votes):
            warm = _draw_warmup(rng, warmup_pool, span, warmup_length,
                                corpus.dt, b, noise_frac)
            pred = res.predict(warm, b, steps, stop_region=region)
            if not pred.diverged:
                saw_finite = True
            if classify(pred, region, t_max) is not None:
                collapses += 1
        return 2 * collapses > n_votes

    if majority_collapse(b_lo):
        estimate, flag = b_lo, "saturated_low"
    elif not majority_collapse(b_hi):
        estimate, flag = b_hi, "saturated_high"
    else:
        lo, hi = b_lo, b_hi
        while hi - lo > resolution:
            mid = 0.5 * (lo + hi)
            if majority_collapse(mid):
                hi = mid
            else:
                lo = mid
        estimate, flag = 0.5 * (lo + hi), ""
    if not saw_finite:
        return MemberEstimate(member, seed, math.nan, "excluded")
    return MemberEstimate(member, seed, estimate, flag)


def _run_tasks(worker, tasks, threads: int):
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, tasks))
    return [worker(t) for t in tasks]


def estimate_critical_point(
    spec: EnsembleSpec,
    corpus: TrainingCorpus,
    b_lo: float,
    b_hi: float,
    resolution: float,
    t_max: float,
    region: EscapeRegion,
    n_votes: int = 5,
    warmup_pool: Optional[np.ndarray] = None,
    warmup_length: Optional[int] = None,
    warmup_noise: float = 0.01,
    threads: int = 1,
) -> CrisisEstimate:
    """Ensemble estimate of the critical parameter by per-member bisection.

    Each member is built and trained independently, then bisects [b_lo, b_hi]
    down to `resolution` for the boundary between majority-sustained and
    majority-collapse over n_votes closed-loop runs per tested value (each
    from a fresh warmup segment). Members saturating at either end keep the
    boundary value and are flagged; members that never produced a finite
    prediction are excluded, and the run fails if more than 20% are.

    Warmup segments default to the highest-parameter training session, per
    the pre-critical drift scenario.
    """
    if not b_lo < b_hi:
        raise ValueError("b_lo must be below b_hi")
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")
    if warmup_pool is None:
        richest = max(corpus.sessions, key=lambda s: s.param)
        warmup_pool = richest.states[corpus.washout :]
    if warmup_length is None:
        warmup_length = corpus.washout
    if warmup_pool.shape[0] < warmup_length:
        raise ValueError("warmup pool shorter than warmup length")

    tasks = [
        (i, s, spec.hyper, corpus, b_lo, b_hi, resolution, t_max, region,
         n_votes, warmup_pool, warmup_length, warmup_noise)
        for i, s in enumerate(spec.member_seeds())
    ]
    members = _run_tasks(_member_bisection, tasks, threads)

    excluded = sum(1 for m in members if m.flag == "excluded")
    if excluded > 0.2 * spec.n_members:
        raise EnsembleUnhealthy(excluded, spec.n_members)
    values = np.array([m.estimate for m in members if m.flag != "excluded"])
    return CrisisEstimate(
        mean=float(values.mean()),
        std=float(values.std()),
        n=len(values),
        per_member=values,
        members=members,
        n_excluded=excluded,
    )


# ---------------------------------------------------------------------------
# Lifetime distributions
# ---------------------------------------------------------------------------

def _member_lifetimes(task):
    (member, seed, hyper, corpus, b, n_ics, t_max, region,
     warmup_pool, warmup_length, noise_frac) = task
    res = Reservoir.build(hyper, corpus.dim, seed).train(corpus)
    rng = np.random.default_rng([seed, 202])
    steps = int(round(t_max / corpus.dt))
    span = warmup_pool.max(axis=0) - warmup_pool.min(axis=0)
    rows = []
    for ic in range(n_ics):
        warm = _draw_warmup(rng, warmup_pool, span, warmup_length,
                            corpus.dt, b, noise_frac)
        pred = res.predict(warm, b, steps, stop_region=region)
        lifetime = classify(pred, region, t_max)
        rows.append((member, ic, lifetime if lifetime is not None else math.nan,
                     lifetime is None))
    return rows


def lifetime_distribution(
    spec: EnsembleSpec,
    corpus: TrainingCorpus,
    b: float,
    n_ics: int,
    t_max: float,
    region: EscapeRegion,
    warmup_pool: Optional[np.ndarray] = None,
    warmup_length: Optional[int] = None,
    warmup_noise: float = 0.01,
    threads: int = 1,
) -> LifetimeSamples:
    """Pooled predicted escape times at parameter b over members and warmups.

    Runs that survive the horizon are counted as censored and excluded from
    any subsequent exponential fit.
    """
    if n_ics < 1:
        raise ValueError("n_ics must be >= 1")
    if warmup_pool is None:
        richest = max(corpus.sessions, key=lambda s: s.param)
        warmup_pool = richest.states[corpus.washout :]
    if warmup_length is None:
        warmup_length = corpus.washout

    tasks = [
        (i, s, spec.hyper, corpus, b, n_ics, t_max, region,
         warmup_pool, warmup_length, warmup_noise)
        for i, s in enumerate(spec.member_seeds())
    ]
    per_run = [row for rows in _run_tasks(_member_lifetimes, tasks, threads)
               for row in rows]
    lifetimes = np.array([r[2] for r in per_run if not r[3]])
    censored = sum(1 for r in per_run if r[3])
    return LifetimeSamples(
        lifetimes=lifetimes, censored=censored, horizon=t_max, per_run=per_run
    )


# ---------------------------------------------------------------------------
# Exponential fit
# ---------------------------------------------------------------------------

def fit_exponential(
    samples: LifetimeSamples,
    shift: Optional[float] = None,
    confidence: float = 0.95,
) -> ExponentialFit:
    """Maximum-likelihood mean of a shifted exponential with chi-square CI.

    The shift (default: the minimum observed lifetime) absorbs the
    deterministic pre-escape phase; tau is exactly the sample mean of the
    shifted lifetimes. Censored runs never enter the fit.
    """
    x = np.asarray(samples.lifetimes, dtype=float)
    x = x[np.isfinite(x)]
    n = x.size
    if n < 10:
        raise ValueError(f"need at least 10 uncensored lifetimes, got {n}")
    if shift is None:
        shift = float(x.min())
    tau = float(np.mean(x - shift))
    if tau <= 0.0:
        raise ValueError("degenerate sample: all lifetimes equal the shift")
    a = 1.0 - confidence
    ci_low = 2.0 * n * tau / chi2.ppf(1.0 - a / 2.0, 2 * n)
    ci_high = 2.0 * n * tau / chi2.ppf(a / 2.0, 2 * n)
    return ExponentialFit(tau=tau, ci_low=float(ci_low), ci_high=float(ci_high),
                          shift=shift, n=n)


def survival_table(samples: LifetimeSamples, n_bins: int = 30) -> np.ndarray:
    """Log-survival curve support points: columns (lifetime, log survival).

    Uses the empirical survival function S(t) = fraction of uncensored
    lifetimes exceeding t, evaluated at sorted sample quantiles thinned to
    at most n_bins points.
    """
    x = np.sort(np.asarray(samples.lifetimes, dtype=float))
    n = x.size
    if n == 0:
        return np.empty((0, 2))
    surv = 1.0 - np.arange(1, n + 1) / (n + 1.0)
    keep = np.unique(np.linspace(0, n - 1, min(n_bins, n)).astype(int))
    return np.column_stack([x[keep], np.log(surv[keep])])


# ---------------------------------------------------------------------------
# Return maps
# ---------------------------------------------------------------------------

def return_map(series: TimeSeries, coord: int) -> ReturnMap:
    """Pairs of consecutive local minima of one coordinate.

    Minima are strict three-point minima refined by parabolic interpolation
    of the sample values.
    """
    if len(series) < 3:
        raise ValueError("series must have at least 3 samples")
    y = series.states[:, coord]
    mid = y[1:-1]
    is_min = (y[:-2] > mid) & (mid < y[2:])
    idx = np.nonzero(is_min)[0] + 1
    if idx.size == 0:
        return ReturnMap(np.empty((0, 2)))
    a, b, c = y[idx - 1], y[idx], y[idx + 1]
    denom = a - 2.0 * b + c
    refined = b - (c - a) ** 2 / (8.0 * denom)
    if refined.size < 2:
        return ReturnMap(np.empty((0, 2)))
    return ReturnMap(np.column_stack([refined[:-1], refined[1:]]))
