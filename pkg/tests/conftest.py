import numpy as np
import pytest

from scenery_lab.gibbs import bernoulli_potential, build_gibbs, parry_measure
from scenery_lab.ifs import natural_measure, preset
from scenery_lab.symbolic import SymbolicSystem, full_shift

GOLDEN = (1 + 5**0.5) / 2
COUNTER = [[0, 1, 0], [1, 0, 1], [1, 0, 1]]


@pytest.fixture(scope="session")
def golden_shift():
    return SymbolicSystem(np.array([[1, 1], [1, 0]]))


@pytest.fixture(scope="session")
def counter_shift():
    return SymbolicSystem(np.array(COUNTER))


@pytest.fixture(scope="session")
def cantor():
    return preset("cantor3")


@pytest.fixture(scope="session")
def cantor_half(cantor):
    return natural_measure(cantor)


@pytest.fixture(scope="session")
def cantor_skew(cantor):
    return build_gibbs(cantor.symbolic, bernoulli_potential([0.3, 0.7]))


@pytest.fixture(scope="session")
def golden_sys():
    return preset("goldenmean2")


@pytest.fixture(scope="session")
def golden_parry(golden_sys):
    return parry_measure(golden_sys.symbolic)


@pytest.fixture(scope="session")
def rot5():
    return preset("rot5")


@pytest.fixture(scope="session")
def rot5_natural(rot5):
    return natural_measure(rot5)


@pytest.fixture(scope="session")
def fourcorner():
    return preset("fourcorner4")


@pytest.fixture(scope="session")
def full2():
    return full_shift(2)
