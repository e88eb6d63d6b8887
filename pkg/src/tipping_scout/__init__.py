"""Parameter-aware reservoir computing for predicting critical transitions.

Train an echo-state network with a bifurcation-parameter input channel on
pre-transition time series from a few parameter values, then ask it where
the system's chaotic attractor dies (the crisis point) and how long
post-critical transients survive. Ground-truth simulators for the Ikeda map
and a three-species food chain are included for validation.
"""

__version__ = "0.1.0"

from .dynsys import (
    EscapeRegion,
    FoodChainParams,
    IkedaParams,
    TimeSeries,
)
from .reservoir import HyperParams, Prediction, Reservoir, TrainingCorpus
from .crisis import (
    CrisisEstimate,
    EnsembleSpec,
    LifetimeSamples,
    ReturnMap,
    classify,
    estimate_critical_point,
    fit_exponential,
    lifetime_distribution,
    return_map,
)
from .hyperopt import Objective, SearchSpace, evaluate, optimize

__all__ = [
    "__version__",
    "EscapeRegion",
    "FoodChainParams",
    "IkedaParams",
    "TimeSeries",
    "HyperParams",
    "Prediction",
    "Reservoir",
    "TrainingCorpus",
    "CrisisEstimate",
    "EnsembleSpec",
    "LifetimeSamples",
    "ReturnMap",
    "classify",
    "estimate_critical_point",
    "fit_exponential",
    "lifetime_distribution",
    "return_map",
    "Objective",
    "SearchSpace",
    "evaluate",
    "optimize",
]
