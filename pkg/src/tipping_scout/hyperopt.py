"""Bayesian optimization of the seven reservoir hyperparameters.

The objective scores a hyperparameter point by short-term forecast skill on
held-out segments plus long-term climate fidelity of free runs, both at the
training parameter values, averaged over a few reservoir seeds. A Gaussian
process with a squared-exponential kernel over the normalized search box
drives an expected-improvement loop seeded with a Latin-hypercube design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

from .dynsys import EscapeRegion, TimeSeries
from .reservoir import HyperParams, Reservoir, TrainingCorpus

__all__ = [
    "SearchSpace",
    "Objective",
    "ValidationSegment",
    "ClimateCheck",
    "ValidationSuite",
    "TraceEntry",
    "OptimizeResult",
    "OptimizationFailed",
    "evaluate",
    "optimize",
]

PARAM_NAMES = ("avg_degree", "spectral_radius", "sigma_in", "k_b", "b0",
               "alpha", "log10_beta")

ESCAPE_PENALTY = 10.0     # climate-term charge when a free run leaves the box
TRUNCATION_LOSS = 4.0     # short-term charge when a forecast diverges early


class OptimizationFailed(RuntimeError):
    """Every objective evaluation failed; carries the trace for inspection."""

    def __init__(self, trace):
        super().__init__("all objective evaluations failed")
        self.trace = trace


@dataclass(frozen=True)
class SearchSpace:
    """Box bounds for the seven tunable hyperparameters.

    beta is searched in log10. alpha's lower bound stays strictly positive
    to respect the (0, 1] leak-rate domain.
    """

    avg_degree: tuple = (1.0, 20.0)
    spectral_radius: tuple = (0.1, 2.0)
    sigma_in: tuple = (0.01, 3.0)
    k_b: tuple = (0.0, 3.0)
    b0: tuple = (-3.0, 3.0)
    alpha: tuple = (0.01, 1.0)
    log10_beta: tuple = (-10.0, -1.0)

    def __post_init__(self):
        for name in PARAM_NAMES:
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"{name}: bounds must be finite with lower < upper")

    def bounds(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PARAM_NAMES])

    def to_hyper(self, point: Sequence[float], n_nodes: int) -> HyperParams:
        """Interpret a 7-vector in this space as reservoir hyperparameters."""
        p = dict(zip(PARAM_NAMES, point))
        return HyperParams(
            n_nodes=n_nodes,
            avg_degree=min(p["avg_degree"], float(n_nodes)),
            spectral_radius=p["spectral_radius"],
            sigma_in=p["sigma_in"],
            k_b=p["k_b"],
            b0=p["b0"],
            alpha=p["alpha"],
            beta=10.0 ** p["log10_beta"],
        )

    def from_hyper(self, hyper: HyperParams) -> np.ndarray:
        return np.array([
            hyper.avg_degree, hyper.spectral_radius, hyper.sigma_in,
            hyper.k_b, hyper.b0, hyper.alpha, math.log10(hyper.beta),
        ])


@dataclass(frozen=True)
class Objective:
    """Loss weighting: short-term error plus climate error."""

    w_short: float = 1.0
    w_climate: float = 1.0
    horizon_lyapunov: float = 5.0
    n_segments: int = 20

    def __post_init__(self):
        if self.w_short < 0 or self.w_climate < 0:
            raise ValueError("weights must be non-negative")
        if self.w_short == 0 and self.w_climate == 0:
            raise ValueError("at least one weight must be positive")


@dataclass
class ValidationSegment:
    """Warmup plus true continuation at one parameter value (raw units)."""

    warmup: np.ndarray
    truth: np.ndarray
    b: float


@dataclass
class ClimateCheck:
    """Reference moments and a warmup for a long free run at one parameter."""

    warmup: np.ndarray
    b: float
    mean: np.ndarray
    std: np.ndarray


@dataclass
class ValidationSuite:
    """Held-out data bundle consumed by evaluate(); disjoint from training."""

    segments: list
    climates: list
    region: EscapeRegion
    dt: float
    lyapunov_exponent: float
    free_run_steps: int = 100_000

    @property
    def norm(self) -> float:
        """Error normalization: rms attractor scale pooled over climates."""
        return math.sqrt(sum(float(np.sum(c.std**2)) for c in self.climates)
                         / max(len(self.climates), 1))

    def horizon_steps(self, lyapunov_horizons: float) -> int:
        return max(1, math.ceil(lyapunov_horizons
                                / (self.lyapunov_exponent * self.dt)))


def _short_term_loss(res, suite: ValidationSuite, horizon: int) -> float:
    norm_scale = suite.norm
    errs = []
    for seg in suite.segments:
        horizon = min(horizon, seg.truth.shape[0])
        warm = TimeSeries(suite.dt, seg.warmup, seg.b)
        pred = res.predict(warm, seg.b, horizon)
        got = pred.series.states
        if got.shape[0] < horizon:
            errs.append(TRUNCATION_LOSS)
            continue
        diff = got - seg.truth[:horizon]
        errs.append(math.sqrt(float(np.mean(np.sum(diff**2, axis=1)))) / norm_scale)
    return float(np.mean(errs))


def _symmetric_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(2.0 * np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-12)))


def _climate_loss(res, suite: ValidationSuite) -> float:
    from .dynsys import escape_time  # local import to avoid cycle noise

    costs = []
    for check in suite.climates:
        warm = TimeSeries(suite.dt, check.warmup, check.b)
        pred = res.predict(warm, check.b, suite.free_run_steps,
                           stop_region=suite.region)
        full = len(pred.series) == suite.free_run_steps and not pred.diverged
        if not full or escape_time(pred.series, suite.region,
                                   suite.free_run_steps * suite.dt) is not None:
            costs.append(ESCAPE_PENALTY)
            continue
        states = pred.series.states
        err_mean = _symmetric_rel_err(states.mean(axis=0), check.mean)
        err_std = _symmetric_rel_err(states.std(axis=0), check.std)
        costs.append(0.5 * (err_mean + err_std))
    return float(np.mean(costs))


def evaluate(
    hyper: HyperParams,
    corpus: TrainingCorpus,
    suite: ValidationSuite,
    objective: Objective = Objective(),
    seed: int = 0,
    n_reservoir_seeds: int = 3,
) -> float:
    """Seed-averaged validation loss of one hyperparameter point.

    loss = w_short * mean NRMSE over held-out segments up to the horizon
         + w_climate * mean climate cost of long free runs (escape costs a
           flat penalty instead of an error).

    Divergent runs never raise; they are priced into the loss.
    """
    horizon = suite.horizon_steps(objective.horizon_lyapunov)
    losses = []
    for j in range(n_reservoir_seeds):
        res = Reservoir.build(hyper, corpus.dim, seed * 1000 + j).train(corpus)
        loss = 0.0
        if objective.w_short > 0:
            loss += objective.w_short * _short_term_loss(res, suite, horizon)
        if objective.w_climate > 0:
            loss += objective.w_climate * _climate_loss(res, suite)
        losses.append(loss)
    return float(np.mean(losses))


# ---------------------------------------------------------------------------
# Gaussian-process expected-improvement loop
# ---------------------------------------------------------------------------

@dataclass
class TraceEntry:
    iteration: int
    loss: float            # NaN for failed evaluations
    point: np.ndarray
    seed: int


@dataclass
class OptimizeResult:
    best_point: np.ndarray
    best_loss: float
    trace: list = field(default_factory=list)

    def best_seen(self) -> np.ndarray:
        """Cumulative best loss along the trace (non-increasing)."""
        vals = np.array([t.loss for t in self.trace])
        vals = np.where(np.isfinite(vals), vals, np.inf)
        return np.minimum.accumulate(vals)


class _GP:
    """Squared-exponential GP on the unit box with grid-fit scale and jitter."""

    LENGTH_GRID = np.geomspace(0.05, 2.0, 10)
    JITTER_GRID = np.array([1e-6, 1e-4, 1e-2, 1e-1])

    def __init__(self, X: np.ndarray, y: np.ndarray):
        self.X = X
        self.y_mean = float(y.mean())
        self.y_std = float(y.std()) or 1.0
        self.y = (y - self.y_mean) / self.y_std
        best = (-np.inf, None, None)
        for ell in self.LENGTH_GRID:
            K = self._kernel(X, X, ell)
            for jitter in self.JITTER_GRID:
                try:
                    factor = cho_factor(K + jitter * np.eye(len(X)), lower=True)
                except np.linalg.LinAlgError:
                    continue
                alpha = cho_solve(factor, self.y)
                logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
                ll = -0.5 * float(self.y @ alpha) - 0.5 * logdet
                if ll > best[0]:
                    best = (ll, ell, jitter)
        if best[1] is None:
            raise np.linalg.LinAlgError("GP fit failed for all scale candidates")
        self.ell, self.jitter = best[1], best[2]
        self.factor = cho_factor(self._kernel(X, X, self.ell)
                                 + self.jitter * np.eye(len(X)), lower=True)
        self.alpha = cho_solve(self.factor, self.y)

    @staticmethod
    def _kernel(A, B, ell):
        d2 = np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=-1)
        return np.exp(-0.5 * d2 / ell**2)

    def posterior(self, Xq: np.ndarray):
        Kq = self._kernel(Xq, self.X, self.ell)
        mu = Kq @ self.alpha
        v = cho_solve(self.factor, Kq.T)
        var = np.clip(1.0 + self.jitter - np.sum(Kq * v.T, axis=1), 1e-12, None)
        return mu, np.sqrt(var)

    def expected_improvement(self, Xq: np.ndarray) -> np.ndarray:
        mu, sd = self.posterior(Xq)
        best = float(self.y.min())
        z = (best - mu) / sd
        return sd * (z * norm.cdf(z) + norm.pdf(z))


def optimize(
    space_or_bounds,
    fn: Callable[[np.ndarray, int], float],
    budget: int,
    seed: int = 0,
    n_initial: int = 10,
    n_candidates: int = 1024,
) -> OptimizeResult:
    """Minimize fn over a box with GP-EI after a Latin-hypercube design.

    fn receives (point, evaluation_seed) and returns a scalar loss;
    exceptions and non-finite returns count as failed evaluations. With
    budget equal to the initial design size, no surrogate step runs and the
    best initial point is returned. Deterministic per seed.
    """
    if budget < n_initial:
        raise ValueError(f"budget must be >= {n_initial}")
    bounds = (space_or_bounds.bounds() if isinstance(space_or_bounds, SearchSpace)
              else np.asarray(space_or_bounds, dtype=float))
    dim = bounds.shape[0]
    lo, hi = bounds[:, 0], bounds[:, 1]

    def run_one(iteration: int, unit_point: np.ndarray) -> TraceEntry:
        point = lo + unit_point * (hi - lo)
        eval_seed = seed + iteration
        try:
            loss = float(fn(point, eval_seed))
        except Exception:
            loss = math.nan
        if not math.isfinite(loss):
            loss = math.nan
        return TraceEntry(iteration, loss, point, eval_seed)

    design = qmc.LatinHypercube(d=dim, seed=seed).random(n_initial)
    trace = [run_one(i, design[i]) for i in range(n_initial)]

    for iteration in range(n_initial, budget):
        ok = [t for t in trace if math.isfinite(t.loss)]
        if not ok:
            break
        X = (np.array([t.point for t in ok]) - lo) / (hi - lo)
        y = np.array([t.loss for t in ok])
        rng = np.random.default_rng([seed, iteration])
        candidates = rng.random((n_candidates, dim))
        try:
            gp = _GP(X, y)
            ei = gp.expected_improvement(candidates)
            pick = candidates[int(np.argmax(ei))]
        except np.linalg.LinAlgError:
            pick = candidates[0]
        trace.append(run_one(iteration, pick))

    ok = [t for t in trace if math.isfinite(t.loss)]
    if not ok:
        raise OptimizationFailed(trace)
    best = min(ok, key=lambda t: t.loss)
    return OptimizeResult(best_point=best.point, best_loss=best.loss, trace=trace)
