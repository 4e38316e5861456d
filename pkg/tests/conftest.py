import warnings

import numpy as np
import pytest

from nsc_aipw.aipw import EstimatorConfig
from nsc_aipw.oracle import random_nsc_law

# saturated models for every nuisance: exact on binary laws
EXACT = EstimatorConfig(delta="saturated", baseline="saturated", mu="saturated",
                        interaction="saturated", pm="saturated", tol=1e-13, variance=False)


def law_rng(t):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(2024, spawn_key=(t,))))


@pytest.fixture(params=[(0, 0), (1, 2), (2, 0), (3, 2)], ids=lambda v: f"law{v[0]}-p{v[1]}")
def nsc_law(request):
    t, p = request.param
    return random_nsc_law(law_rng(t), 3, p)


@pytest.fixture
def exact_config():
    return EXACT


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield
