"""Ground-truth target systems and brute-force oracles.

Implements the Ikeda laser-cavity map and the McCann-Yodzis three-species
food chain, a fixed-step RK4 integrator, escape-time measurement against an
operating-region box, and a Benettin largest-Lyapunov-exponent estimator.
These provide training data for the reservoir and the independent reference
values everything else is validated against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "IkedaParams",
    "FoodChainParams",
    "TimeSeries",
    "EscapeRegion",
    "IntegrationDiverged",
    "ikeda_step",
    "ikeda_trajectory",
    "food_chain_rhs",
    "food_chain_trajectory",
    "integrate",
    "escape_time",
    "ikeda_escape_times",
    "food_chain_escape_times",
    "lyapunov_estimate",
    "ikeda_lyapunov",
    "food_chain_lyapunov",
    "sample_initial_conditions",
    "write_csv",
    "read_csv",
]

FOOD_CHAIN_DT = 0.01          # integrator step (time units)
FOOD_CHAIN_SUBSTEPS = 10      # integrator steps per recorded sample (dt=0.1)
EXTINCTION_FLOOR = 1e-4       # predator density treated as extinct


class IntegrationDiverged(RuntimeError):
    """Raised when an integrated state stops being finite."""

    def __init__(self, step: int):
        super().__init__(f"state became non-finite at step {step}")
        self.step = step


@dataclass(frozen=True)
class IkedaParams:
    """Ikeda map z -> mu + gamma * z * exp(i*(kappa - eta/(1+|z|^2)))."""

    mu: float
    gamma: float = 0.9
    kappa: float = 0.4
    eta: float = 6.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0,1), got {self.gamma}")
        if self.eta <= 0.0:
            raise ValueError(f"eta must be positive, got {self.eta}")


@dataclass(frozen=True)
class FoodChainParams:
    """Resource-consumer-predator chain with logistic resource growth.

    K is the environmental carrying capacity of the resource and the
    bifurcation parameter; the remaining rates and half-saturation constants
    default to the standard chaotic-regime values.
    """

    K: float
    x_c: float = 0.4
    y_c: float = 2.009
    x_p: float = 0.08
    y_p: float = 2.876
    R0: float = 0.16129
    C0: float = 0.5

    def __post_init__(self):
        for name in ("K", "x_c", "y_c", "x_p", "y_p", "R0", "C0"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass
class TimeSeries:
    """Uniformly sampled trajectory tagged with its bifurcation parameter.

    states has shape (T, D); dt is the sampling interval (1 for maps);
    param is the parameter value the data were generated at.
    """

    dt: float
    states: np.ndarray
    param: float

    def __post_init__(self):
        self.states = np.ascontiguousarray(self.states, dtype=float)
        if self.states.ndim != 2:
            raise ValueError("states must be a (T, D) array")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    def segment(self, start: int, length: int) -> "TimeSeries":
        if start < 0 or start + length > len(self):
            raise IndexError("segment out of range")
        return TimeSeries(self.dt, self.states[start : start + length], self.param)


@dataclass(frozen=True)
class EscapeRegion:
    """Axis-aligned "normal operation" box with a consecutive-sample grace.

    Escape is declared at the first sample opening `grace` consecutive
    out-of-box samples. If floor_coord is set, a sample also counts as
    outside when that coordinate drops below floor_value (species
    extinction for the food chain).
    """

    lower: np.ndarray
    upper: np.ndarray
    grace: int = 10
    floor_coord: Optional[int] = None
    floor_value: float = EXTINCTION_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("lower/upper must be 1-D arrays of equal length")
        if not np.all(self.lower < self.upper):
            raise ValueError("lower must be below upper component-wise")
        if self.grace < 1:
            raise ValueError("grace must be >= 1")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def _floor_coord_int(self) -> int:
        return -1 if self.floor_coord is None else int(self.floor_coord)

    def outside(self, states: np.ndarray) -> np.ndarray:
        """Boolean out-of-region mask per sample (non-finite counts as out)."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        out = np.any((states < self.lower) | (states > self.upper), axis=1)
        out |= ~np.isfinite(states).all(axis=1)
        if self.floor_coord is not None:
            out |= states[:, self.floor_coord] < self.floor_value
        return out

    @classmethod
    def from_attractor(
        cls,
        states: np.ndarray,
        inflate: float = 0.5,
        grace: int = 10,
        floor_coord: Optional[int] = None,
        floor_value: float = EXTINCTION_FLOOR,
    ) -> "EscapeRegion":
        """Bounding box of a reference attractor, inflated about its center."""
        states = np.asarray(states, dtype=float)
        lo = states.min(axis=0)
        hi = states.max(axis=0)
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo) * (1.0 + inflate)
        return cls(center - half, center + half, grace, floor_coord, floor_value)


# ---------------------------------------------------------------------------
# Ikeda map
# ---------------------------------------------------------------------------

def ikeda_step(z: complex, p: IkedaParams) -> complex:
    """One application of the Ikeda map to a complex state.

    The arithmetic mirrors the batch kernel exactly so scalar and bulk
    iteration agree bit for bit.
    """
    x, y = z.real, z.imag
    phase = p.kappa - p.eta / (1.0 + x * x + y * y)
    c, s = np.cos(phase), np.sin(phase)
    return complex(p.mu + p.gamma * (x * c - y * s), p.gamma * (x * s + y * c))


def ikeda_trajectory(
    z0: complex, p: IkedaParams, n: int, transient: int = 0
) -> TimeSeries:
    """Ikeda orbit as a real (T, 2) series of (Re z, Im z); dt = 1.

    `transient` initial iterates are computed and discarded; the returned
    series has n+1 samples starting at the post-transient state.
    """
    orbit = _kernels.ikeda_orbit(
        float(np.real(z0)), float(np.imag(z0)),
        p.mu, p.gamma, p.kappa, p.eta, n + transient,
    )
    states = orbit[transient:]
    if not np.isfinite(states).all():
        raise IntegrationDiverged(int(np.nonzero(~np.isfinite(states).all(axis=1))[0][0]))
    return TimeSeries(1.0, states, p.mu)


# ---------------------------------------------------------------------------
# Food chain
# ---------------------------------------------------------------------------

def food_chain_rhs(state: Sequence[float], p: FoodChainParams) -> np.ndarray:
    """Time derivative (dR/dt, dC/dt, dP/dt) of the three-species chain."""
    R, C, P = state
    dR = R * (1.0 - R / p.K) - p.x_c * p.y_c * C * R / (R + p.R0)
    dC = p.x_c * C * (p.y_c * R / (R + p.R0) - 1.0) - p.x_p * p.y_p * P * C / (C + p.C0)
    dP = p.x_p * P * (p.y_p * C / (C + p.C0) - 1.0)
    return np.array([dR, dC, dP])


def food_chain_trajectory(
    p: FoodChainParams,
    x0: Sequence[float],
    n_samples: int,
    transient: int = 0,
    dt: float = FOOD_CHAIN_DT,
    substeps: int = FOOD_CHAIN_SUBSTEPS,
) -> TimeSeries:
    """RK4 food-chain trajectory sampled every substeps*dt time units.

    `transient` leading samples are discarded; the result has n_samples+1
    rows and is tagged with K.
    """
    orbit = _kernels.food_chain_orbit(
        np.asarray(x0, dtype=float),
        p.K, p.x_c, p.y_c, p.x_p, p.y_p, p.R0, p.C0,
        dt, n_samples + transient, substeps,
    )
    states = orbit[transient:]
    bad = ~np.isfinite(states).all(axis=1)
    if bad.any():
        raise IntegrationDiverged(int(np.nonzero(bad)[0][0]))
    return TimeSeries(dt * substeps, states, p.K)


# ---------------------------------------------------------------------------
# Generic fixed-step RK4
# ---------------------------------------------------------------------------

def integrate(
    rhs: Callable[[np.ndarray], np.ndarray],
    x0: Sequence[float],
    dt: float,
    n: int,
    param: float = math.nan,
) -> TimeSeries:
    """Classical 4th-order Runge-Kutta with n fixed steps of size dt.

    Raises IntegrationDiverged naming the first non-finite step.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.asarray(x0, dtype=float)
    out = np.empty((n + 1, x.shape[0]))
    out[0] = x
    for i in range(1, n + 1):
        k1 = np.asarray(rhs(x))
        k2 = np.asarray(rhs(x + 0.5 * dt * k1))
        k3 = np.asarray(rhs(x + 0.5 * dt * k2))
        k4 = np.asarray(rhs(x + dt * k3))
        x = x + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not np.isfinite(x).all():
            raise IntegrationDiverged(i)
        out[i] = x
    return TimeSeries(dt, out, param)


# ---------------------------------------------------------------------------
# Escape times
# ---------------------------------------------------------------------------

def escape_time(
    series: TimeSeries, region: EscapeRegion, t_max: float
) -> Optional[float]:
    """Lifetime until escape from the operating region, None if survived.

    The lifetime is the index (times dt) of the first sample that opens
    `region.grace` consecutive out-of-region samples; escapes later than
    t_max count as survival.
    """
    if t_max < series.dt:
        raise ValueError("t_max must cover at least one sample")
    idx = _kernels.escape_scan(
        series.states, region.lower, region.upper,
        region._floor_coord_int, region.floor_value, region.grace,
    )
    if idx < 0:
        return None
    lifetime = idx * series.dt
    return lifetime if lifetime <= t_max else None


def ikeda_escape_times(
    p: IkedaParams,
    starts: np.ndarray,
    region: EscapeRegion,
    t_max: float,
) -> np.ndarray:
    """Oracle escape times for a batch of Ikeda initial conditions.

    Returns one lifetime per row of starts; NaN marks survival past t_max.
    """
    max_steps = int(t_max)
    idx = _kernels.ikeda_escape_batch(
        np.ascontiguousarray(starts, dtype=float),
        p.mu, p.gamma, p.kappa, p.eta,
        region.lower, region.upper, region.grace, max_steps,
    )
    times = idx.astype(float)
    times[idx < 0] = np.nan
    times[times > t_max] = np.nan
    return times


def food_chain_escape_times(
    p: FoodChainParams,
    starts: np.ndarray,
    region: EscapeRegion,
    t_max: float,
    dt: float = FOOD_CHAIN_DT,
    substeps: int = FOOD_CHAIN_SUBSTEPS,
) -> np.ndarray:
    """Oracle escape times (in time units) for food-chain initial conditions."""
    sample_dt = dt * substeps
    max_samples = int(t_max / sample_dt)
    idx = _kernels.food_chain_escape_batch(
        np.ascontiguousarray(starts, dtype=float),
        p.K, p.x_c, p.y_c, p.x_p, p.y_p, p.R0, p.C0, dt, substeps,
        region.lower, region.upper,
        region._floor_coord_int, region.floor_value,
        region.grace, max_samples,
    )
    times = idx.astype(float) * sample_dt
    times[idx < 0] = np.nan
    times[times > t_max] = np.nan
    return times


# ---------------------------------------------------------------------------
# Lyapunov exponent (Benettin two-trajectory renormalization)
# ---------------------------------------------------------------------------

def lyapunov_estimate(
    step: Callable[[np.ndarray], np.ndarray],
    x0: Sequence[float],
    n: int,
    dt: float = 1.0,
    d0: float = 1e-9,
    transient: int = 100,
    seed: int = 0,
) -> float:
    """Largest Lyapunov exponent per unit time of an iterated map.

    `step` advances a state vector by one sample of duration dt. A shadow
    trajectory offset by d0 in a seeded random direction is renormalized to
    distance d0 after every step; the exponent is the mean log expansion
    rate. Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=float)
    for _ in range(transient):
        x = np.asarray(step(x))
    direction = rng.standard_normal(x.shape[0])
    direction /= np.linalg.norm(direction)
    y = x + d0 * direction
    total = 0.0
    for _ in range(n):
        x = np.asarray(step(x))
        y = np.asarray(step(y))
        d = np.linalg.norm(y - x)
        if d == 0.0 or not np.isfinite(d):
            raise ValueError("shadow trajectory collapsed or diverged")
        total += math.log(d / d0)
        y = x + (y - x) * (d0 / d)
    return total / (n * dt)


def ikeda_lyapunov(
    p: IkedaParams, n: int = 20000, z0: complex = 0.5 + 0.5j, seed: int = 0
) -> float:
    """Largest Lyapunov exponent (per iterate) of the Ikeda map."""

    def step(v):
        return _kernels.ikeda_orbit(v[0], v[1], p.mu, p.gamma, p.kappa, p.eta, 1)[1]

    return lyapunov_estimate(step, [np.real(z0), np.imag(z0)], n, dt=1.0,
                             transient=1000, seed=seed)


def food_chain_lyapunov(
    p: FoodChainParams,
    n: int = 20000,
    x0: Sequence[float] = (0.7, 0.2, 0.8),
    seed: int = 0,
    dt: float = FOOD_CHAIN_DT,
    substeps: int = FOOD_CHAIN_SUBSTEPS,
) -> float:
    """Largest Lyapunov exponent (per time unit) of the food chain."""
    args = (p.K, p.x_c, p.y_c, p.x_p, p.y_p, p.R0, p.C0, dt, 1, substeps)

    def step(v):
        return _kernels.food_chain_orbit(v, *args)[1]

    return lyapunov_estimate(step, x0, n, dt=dt * substeps,
                             transient=2000, seed=seed)


# ---------------------------------------------------------------------------
# Initial conditions for lifetime studies
# ---------------------------------------------------------------------------

def sample_initial_conditions(
    attractor: np.ndarray, n: int, seed: int, noise_frac: float = 0.01
) -> np.ndarray:
    """Random on-attractor states, jittered by a fraction of each range.

    Points are drawn uniformly from the rows of a pre-critical reference
    trajectory and perturbed by uniform noise of noise_frac times each
    coordinate's attractor range.
    """
    attractor = np.asarray(attractor, dtype=float)
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, attractor.shape[0], size=n)
    span = attractor.max(axis=0) - attractor.min(axis=0)
    noise = rng.uniform(-1.0, 1.0, size=(n, attractor.shape[1])) * (noise_frac * span)
    return attractor[rows] + noise


# ---------------------------------------------------------------------------
# CSV export / import (schema: t,<labels...>,param)
# ---------------------------------------------------------------------------

def write_csv(series: TimeSeries, path, labels: Optional[Sequence[str]] = None) -> None:
    """Write a trajectory as CSV with shortest round-trip float formatting."""
    if labels is None:
        labels = [f"x{i+1}" for i in range(series.dim)]
    if len(labels) != series.dim:
        raise ValueError("one label per state coordinate required")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t," + ",".join(labels) + ",param\n")
        param = repr(float(series.param))
        for i in range(len(series)):
            t = repr(float(i * series.dt))
            row = ",".join(repr(float(v)) for v in series.states[i])
            fh.write(f"{t},{row},{param}\n")


def read_csv(path) -> TimeSeries:
    """Read a trajectory written by write_csv (or matching its schema)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if len(header) < 3 or header[0] != "t" or header[-1] != "param":
            raise ValueError(f"{path}: expected header t,<coords...>,param")
        dim = len(header) - 2
        times, rows, params = [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != dim + 2:
                raise ValueError(f"{path}:{lineno}: expected {dim + 2} fields")
            try:
                vals = [float(v) for v in parts]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            times.append(vals[0])
            rows.append(vals[1:-1])
            params.append(vals[-1])
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least two samples")
    dts = np.diff(times)
    dt = dts[0]
    if not np.allclose(dts, dt, rtol=1e-9, atol=0.0):
        raise ValueError(f"{path}: sampling interval is not constant")
    if len(set(params)) != 1:
        raise ValueError(f"{path}: param column must be constant")
    return TimeSeries(dt, np.asarray(rows), params[0])
