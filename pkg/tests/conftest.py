import functools

import pytest

from dpptavg.dual import solve_dual
from dpptavg.instances import load_builtin


@functools.lru_cache(maxsize=None)
def builtin(name):
    return load_builtin(name)


@functools.lru_cache(maxsize=None)
def dual_of(name):
    return solve_dual(builtin(name))


@pytest.fixture
def sim_linear():
    return builtin("sim-linear")


@pytest.fixture
def sim_quadratic():
    return builtin("sim-quadratic")
