import numpy as np
import pytest

from classifier import NetConfig
from datagen import Dataset, GaussianChainConfig, sample_gaussian_chain


@pytest.fixture
def chain():
    return GaussianChainConfig(sigma_x=10.0, sigma_y=1.0, sigma_z=5.0, d=3)


@pytest.fixture
def small_chain_data(chain):
    return sample_gaussian_chain(chain, 400, seed=7)


@pytest.fixture
def tiny_net():
    return NetConfig(input_dim=1, hidden=(8,), epochs=3, minibatch_size=64, init_seed=3)


@pytest.fixture
def grid_dataset():
    # z on an integer grid: plenty of exact distance ties
    rng = np.random.default_rng(0)
    z = rng.integers(0, 4, size=(60, 2)).astype(float)
    x = rng.normal(size=(60, 1))
    y = rng.normal(size=(60, 1))
    return Dataset(x, y, z)
