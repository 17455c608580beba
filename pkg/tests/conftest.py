import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from lossnet.model import enumerate_statespace, make_params

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def bistable():
    """Two-class instance with a narrow-band class of size C (two minima and a saddle)."""
    p = make_params([1, 20], 20, [0.68, 9.0], [1, 1], [0, 0])
    return p, enumerate_statespace(p)


@pytest.fixture(scope="session")
def switching():
    p = make_params([1, 5], 5, [0.64, 2.71], [1, 1], [0, 0])
    return p, enumerate_statespace(p)


@pytest.fixture(scope="session")
def single_class():
    p = make_params([1], 5, [2.0], [1.0], [1.0])
    return p, enumerate_statespace(p)


@pytest.fixture(scope="session")
def tiny():
    p = make_params([1], 1, [1.0], [1.0], [1.0])
    return p, enumerate_statespace(p)


@pytest.fixture(scope="session")
def bistable_points(bistable):
    from lossnet.equilibrium import find_all_critical_points

    return find_all_critical_points(bistable[0])


def random_instance(rng: np.random.Generator, K=None, max_C=12, equal_A=False, gamma_positive=True):
    K = int(rng.integers(1, 4)) if K is None else K
    C = int(rng.integers(1, max_C + 1))
    if equal_A:
        a = int(rng.integers(1, C + 1))
        A = [a] * K
    else:
        A = [int(rng.integers(1, C + 1)) for _ in range(K)]
    lam = rng.uniform(0.05, 3.0, K)
    lo = 0.05 if gamma_positive else 0.0
    gamma = rng.uniform(lo, 2.0, K)
    mu = rng.uniform(0.0, 2.0, K)
    return make_params(A, C, lam, gamma, mu)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
    for line in mod.NOTES:
        terminalreporter.write_line(line)
