import numpy as np
import pytest

from groupednormal import GaussianParams, load_galton

GALTON_INIT_1D = GaussianParams.univariate(67.0, 4.0)
GALTON_INIT_2D = GaussianParams(np.array([67.0, 67.0]),
                                np.array([[3.2, 2.227106], [2.227106, 6.2]]))


@pytest.fixture(scope="session")
def galton_parent():
    return load_galton("parent")


@pytest.fixture(scope="session")
def galton_child():
    return load_galton("child")


@pytest.fixture(scope="session")
def galton_2d():
    return load_galton("2d")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_params(gen, d, scale=1.0):
    """Random mean and a well-conditioned random covariance."""
    a = gen.normal(size=(d, d))
    cov = scale**2 * (a @ a.T / d + 0.5 * np.eye(d))
    return GaussianParams(gen.normal(scale=scale, size=d), cov)
