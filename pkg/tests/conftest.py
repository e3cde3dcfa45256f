import pytest

from qrhmm import config


@pytest.fixture(scope="session")
def ex1():
    return config.load("example1")


@pytest.fixture(scope="session")
def ex2():
    return config.load("example2")


@pytest.fixture(scope="session")
def ex3():
    return config.load("example3")


@pytest.fixture(scope="session")
def ex1_spec(ex1):
    return ex1.portfolio_spec()


def assert_within_se(est, target, n_se=3.0):
    assert abs(est.value - target) <= n_se * est.std_error + 1e-12, (est, target)


