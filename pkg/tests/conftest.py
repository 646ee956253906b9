"""Shared fixtures"""
import numpy as np
import pytest

from src.kernels import IMQKernel, RBFKernel
from src.targets import standard_gaussian


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def gauss1():
    return standard_gaussian(1)


@pytest.fixture
def gauss2():
    return standard_gaussian(2)


@pytest.fixture(params=[RBFKernel(1.0), RBFKernel(0.7), IMQKernel(1.0, 1.0), IMQKernel(2.0, 0.5)], ids=repr)
def kernel(request):
    return request.param
