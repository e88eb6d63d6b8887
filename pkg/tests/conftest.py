import numpy as np
import pytest

from tipping_scout import experiments
from tipping_scout.reservoir import HyperParams, TrainingCorpus

# Small, fast reservoir settings shared by unit tests (not the tuned presets).
SMALL_HYPER = HyperParams(
    n_nodes=120,
    avg_degree=6.0,
    spectral_radius=0.7,
    sigma_in=1.2,
    k_b=1.0,
    b0=0.7,
    alpha=0.6,
    beta=1e-8,
)


@pytest.fixture(scope="session")
def ikeda_corpus_small() -> TrainingCorpus:
    return experiments.make_corpus(
        "ikeda", experiments.IKEDA_TRAINING_PARAMS, length=4000, washout=300
    )


@pytest.fixture(scope="session")
def ikeda_region_small():
    return experiments.ikeda_region(n=50_000)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
