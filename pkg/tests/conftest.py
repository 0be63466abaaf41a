import numpy as np
import pytest

from mgcp.covblock import OutputData
from mgcp.kernels import Hyperparameters
from mgcp.train import TrainConfig


def random_dataset(rng, q=3, d=1, n=8, n_t=5, x_scale=3.0):
    """Small random multi-output dataset (sources first, target last)."""
    data = [
        OutputData(
            rng.uniform(0, x_scale, (n, d)), rng.standard_normal(n), role=i
        )
        for i in range(q)
    ]
    data.append(
        OutputData(
            rng.uniform(0, x_scale, (n_t, d)), rng.standard_normal(n_t), role="target"
        )
    )
    return data


def random_theta(rng, q=3, d=1, full=False):
    return Hyperparameters.random_init(q, d, rng, full=full)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture
def small_problem(rng):
    data = random_dataset(rng)
    theta = random_theta(rng)
    return data, theta


def quick_config(**kwargs):
    """Training config sized for unit tests, not benchmark quality."""
    defaults = dict(gamma=1.0, restarts=2, max_iterations=200, seed=0)
    defaults.update(kwargs)
    return TrainConfig(**defaults)
