import warnings

import pytest

from qsdctl import (HypothesisFailureWarning, build_generator, load_builtin,
                    solve_qsd)


def _quiet_load(name):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HypothesisFailureWarning)
        return load_builtin(name)


@pytest.fixture(scope="session")
def pure_death():
    return _quiet_load("pure_death")


@pytest.fixture(scope="session")
def logistic():
    return _quiet_load("logistic")


@pytest.fixture(scope="session")
def culling():
    return _quiet_load("culling")


@pytest.fixture(scope="session")
def linear():
    return _quiet_load("linear")


@pytest.fixture(scope="session")
def geometric():
    return _quiet_load("geometric")


# the 200-state eigen solves are the expensive part of the suite; solve
# each once per session and share

@pytest.fixture(scope="session")
def pd_gen(pure_death):
    return build_generator(pure_death, pure_death.constant_control(0), 200)


@pytest.fixture(scope="session")
def pd_qsd(pd_gen):
    return solve_qsd(pd_gen)


@pytest.fixture(scope="session")
def logistic_gen(logistic):
    return build_generator(logistic, logistic.constant_control(0), 200)


@pytest.fixture(scope="session")
def logistic_qsd(logistic_gen):
    return solve_qsd(logistic_gen)


@pytest.fixture(scope="session")
def geometric_gen(geometric):
    return build_generator(geometric, geometric.constant_control(0), 100)


@pytest.fixture(scope="session")
def geometric_qsd(geometric_gen):
    return solve_qsd(geometric_gen)
