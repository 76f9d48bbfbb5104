import numpy as np
import pytest

from model.model_core import NullProblem
from tools.utils_linalg import random_spd


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def make_problem(rng):
    def _make(k: int = 2, beta0: float = 0.0) -> NullProblem:
        return NullProblem(rng.standard_normal((k, 2)), random_spd(2 * k, rng), beta0)
    return _make


# det(Phi) = 1 的 Kronecker 因子
@pytest.fixture
def kron_factors(rng):
    def _make(k: int = 2):
        Omega = random_spd(2, rng)
        Phi = random_spd(k, rng)
        Phi = Phi / np.linalg.det(Phi) ** (1.0 / k)
        return Omega, Phi
    return _make
