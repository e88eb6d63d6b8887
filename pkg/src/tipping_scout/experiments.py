"""Canned wiring for the two built-in target systems.

Builds training corpora, operating-region boxes, warmup pools and held-out
validation suites for the Ikeda map and the food chain, so the CLI, the
tuner and the test suite all run the same experiment layout. Also carries
the tuned hyperparameter presets produced by the bundled Bayesian
optimization runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import dynsys
from .dynsys import EscapeRegion, FoodChainParams, IkedaParams, TimeSeries
from .hyperopt import ClimateCheck, Objective, ValidationSegment, ValidationSuite
from .reservoir import HyperParams, TrainingCorpus

__all__ = [
    "SystemBundle",
    "IKEDA_TRAINING_PARAMS",
    "FOOD_CHAIN_TRAINING_PARAMS",
    "IKEDA_TUNED",
    "FOOD_CHAIN_TUNED",
    "ikeda_series",
    "food_chain_series",
    "ikeda_region",
    "food_chain_region",
    "make_corpus",
    "make_validation_suite",
    "system_dimension",
    "system_labels",
]

IKEDA_TRAINING_PARAMS = (0.91, 0.94, 0.97)
FOOD_CHAIN_TRAINING_PARAMS = (0.97, 0.98, 0.99)

IKEDA_TRANSIENT = 2000          # map iterates dropped before recording
FOOD_CHAIN_TRANSIENT = 20000    # samples (0.1 time units each) dropped

# Tuned by the bundled Bayesian-optimization runs (see cmd_tune); frozen so
# the validation suite, CLI examples and acceptance suite are reproducible.
# Training length of record: 1e5 post-washout samples per session.
IKEDA_TUNED = HyperParams(
    n_nodes=500,
    avg_degree=18.07,
    spectral_radius=0.167,
    sigma_in=2.966,
    k_b=2.744,
    b0=1.107,
    alpha=0.527,
    beta=2.0417379446695273e-06,
)
FOOD_CHAIN_TUNED = HyperParams(
    n_nodes=500,
    avg_degree=6.0,
    spectral_radius=0.9,
    sigma_in=1.0,
    k_b=1.0,
    b0=0.0,
    alpha=0.3,
    beta=1e-7,
)


def system_dimension(system: str) -> int:
    return {"ikeda": 2, "foodchain": 3}[system]


def system_labels(system: str) -> list:
    return {"ikeda": ["x1", "x2"], "foodchain": ["R", "C", "P"]}[system]


def ikeda_series(
    mu: float,
    length: int,
    transient: int = IKEDA_TRANSIENT,
    z0: complex = 0.5 + 0.5j,
    system_params: Optional[dict] = None,
) -> TimeSeries:
    p = IkedaParams(mu=mu, **(system_params or {}))
    return dynsys.ikeda_trajectory(z0, p, length - 1, transient=transient)


def food_chain_series(
    K: float,
    length: int,
    transient: int = FOOD_CHAIN_TRANSIENT,
    x0: Sequence[float] = (0.7, 0.2, 0.8),
    system_params: Optional[dict] = None,
) -> TimeSeries:
    p = FoodChainParams(K=K, **(system_params or {}))
    return dynsys.food_chain_trajectory(p, x0, length - 1, transient=transient)


def simulate_series(system: str, param: float, length: int,
                    system_params: Optional[dict] = None) -> TimeSeries:
    if system == "ikeda":
        return ikeda_series(param, length, system_params=system_params)
    if system == "foodchain":
        return food_chain_series(param, length, system_params=system_params)
    raise ValueError(f"unknown system id: {system}")


def ikeda_region(
    reference_mu: float = IKEDA_TRAINING_PARAMS[-1],
    n: int = 200_000,
    inflate: float = 0.5,
    grace: int = 10,
    system_params: Optional[dict] = None,
) -> EscapeRegion:
    """Inflated bounding box of a long pre-critical Ikeda attractor."""
    ref = ikeda_series(reference_mu, n, system_params=system_params)
    return EscapeRegion.from_attractor(ref.states, inflate=inflate, grace=grace)


def food_chain_region(
    reference_K: float = FOOD_CHAIN_TRAINING_PARAMS[-1],
    n: int = 100_000,
    inflate: float = 0.5,
    grace: int = 10,
    system_params: Optional[dict] = None,
) -> EscapeRegion:
    """Inflated food-chain attractor box plus the predator-extinction floor."""
    ref = food_chain_series(reference_K, n, system_params=system_params)
    return EscapeRegion.from_attractor(
        ref.states, inflate=inflate, grace=grace,
        floor_coord=2, floor_value=dynsys.EXTINCTION_FLOOR,
    )


def region_for(system: str, system_params: Optional[dict] = None) -> EscapeRegion:
    if system == "ikeda":
        return ikeda_region(system_params=system_params)
    if system == "foodchain":
        return food_chain_region(system_params=system_params)
    raise ValueError(f"unknown system id: {system}")


def make_corpus(
    system: str,
    params: Sequence[float],
    length: int,
    washout: int = 1000,
    system_params: Optional[dict] = None,
) -> TrainingCorpus:
    """Training corpus with `length` post-washout samples per parameter."""
    sessions = [simulate_series(system, p, length + washout, system_params)
                for p in params]
    return TrainingCorpus(sessions=sessions, washout=washout)


@dataclass
class SystemBundle:
    """Everything one experiment needs, generated deterministically."""

    system: str
    corpus: TrainingCorpus
    region: EscapeRegion
    lyapunov_exponent: float
    tuned: HyperParams


def oracle_critical_point(
    system: str,
    b_lo: float,
    b_hi: float,
    resolution: float,
    t_max: float,
    region: Optional[EscapeRegion] = None,
    n_votes: int = 5,
    seed: int = 0,
    system_params: Optional[dict] = None,
) -> float:
    """Crisis parameter of the true system by escape-time bisection.

    The same majority-vote bisection the reservoir ensemble uses, but run
    against the ground-truth simulator: at each tested value, n_votes
    on-attractor initial conditions are integrated up to t_max, and majority
    escape marks the value supercritical. Validates the estimator
    independently of any reservoir.
    """
    if region is None:
        region = region_for(system, system_params)
    ref_param = (IKEDA_TRAINING_PARAMS if system == "ikeda"
                 else FOOD_CHAIN_TRAINING_PARAMS)[-1]
    pool = simulate_series(system, ref_param, 50_000, system_params).states
    rng = np.random.default_rng([seed, 17])

    def majority_collapse(b: float) -> bool:
        starts = dynsys.sample_initial_conditions(
            pool, n_votes, seed=int(rng.integers(0, 2**31)))
        if system == "ikeda":
            times = dynsys.ikeda_escape_times(
                IkedaParams(mu=b, **(system_params or {})), starts, region, t_max)
        else:
            times = dynsys.food_chain_escape_times(
                FoodChainParams(K=b, **(system_params or {})), starts, region, t_max)
        return 2 * int(np.isfinite(times).sum()) > n_votes

    lo, hi = b_lo, b_hi
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if majority_collapse(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def lyapunov_for(system: str, param: float,
                 system_params: Optional[dict] = None) -> float:
    if system == "ikeda":
        return dynsys.ikeda_lyapunov(IkedaParams(mu=param, **(system_params or {})))
    if system == "foodchain":
        return dynsys.food_chain_lyapunov(
            FoodChainParams(K=param, **(system_params or {})))
    raise ValueError(f"unknown system id: {system}")


def make_validation_suite(
    system: str,
    params: Sequence[float],
    region: EscapeRegion,
    objective: Objective = Objective(),
    warmup_length: int = 1000,
    climate_reference_length: int = 50_000,
    free_run_steps: int = 100_000,
    seed: int = 0,
    lyapunov_exponent: Optional[float] = None,
    system_params: Optional[dict] = None,
) -> ValidationSuite:
    """Held-out segments and climate references, disjoint from training.

    Validation trajectories start from a different initial condition (and a
    longer transient) than the training corpus, so segments share no samples
    with it.
    """
    if lyapunov_exponent is None:
        lyapunov_exponent = lyapunov_for(system, params[len(params) // 2],
                                         system_params)
    dt = 1.0 if system == "ikeda" else dynsys.FOOD_CHAIN_DT * dynsys.FOOD_CHAIN_SUBSTEPS
    horizon_pad = max(
        int(np.ceil(objective.horizon_lyapunov / (lyapunov_exponent * dt))) + 10, 50
    )
    if climate_reference_length < warmup_length + horizon_pad + 10:
        raise ValueError(
            f"climate_reference_length must exceed {warmup_length + horizon_pad + 10} "
            "to hold a warmup plus the forecast horizon"
        )
    rng = np.random.default_rng([seed, 31])
    per_param = max(1, objective.n_segments // len(params))
    segments = []
    climates = []
    for j, b in enumerate(params):
        if system == "ikeda":
            series = ikeda_series(b, climate_reference_length,
                                  transient=IKEDA_TRANSIENT + 577 + j,
                                  z0=0.31 - 0.22j, system_params=system_params)
        else:
            series = food_chain_series(b, climate_reference_length,
                                       transient=FOOD_CHAIN_TRANSIENT + 577 + j,
                                       x0=(0.65, 0.25, 0.85),
                                       system_params=system_params)
        states = series.states
        climates.append(ClimateCheck(
            warmup=states[:warmup_length], b=b,
            mean=states.mean(axis=0), std=states.std(axis=0),
        ))
        max_start = len(states) - warmup_length - horizon_pad
        for _ in range(per_param):
            i0 = int(rng.integers(0, max_start))
            segments.append(ValidationSegment(
                warmup=states[i0 : i0 + warmup_length],
                truth=states[i0 + warmup_length : i0 + warmup_length + horizon_pad],
                b=b,
            ))
    return ValidationSuite(
        segments=segments, climates=climates, region=region, dt=dt,
        lyapunov_exponent=lyapunov_exponent, free_run_steps=free_run_steps,
    )
