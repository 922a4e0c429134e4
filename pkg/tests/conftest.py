import numpy as np
import pytest

from voi.core import compute_nb_table
from voi.models.gaussian_toy import GaussianToyModel


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def toy():
    return GaussianToyModel(mu0=0.0, sigma0=1.0, sigma=2.0)


@pytest.fixture(scope="session")
def toy_psa(toy):
    return toy.sample_prior(8_000, np.random.default_rng(7))


@pytest.fixture(scope="session")
def toy_nb(toy, toy_psa):
    return compute_nb_table(toy, toy_psa, toy.default_wtp)
