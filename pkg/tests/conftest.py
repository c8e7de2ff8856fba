import numpy as np
import pytest

from dbgames import graphs
from dbgames.game import GameSpec, prisoner_payoff


@pytest.fixture(scope="session")
def k4():
    return graphs.generate("complete", n=4)


@pytest.fixture(scope="session")
def k2():
    return graphs.generate("complete", n=2)


@pytest.fixture(scope="session")
def c6():
    return graphs.generate("cycle", n=6)


@pytest.fixture(scope="session")
def path3():
    return graphs.build_kernel(np.array([[0.0, 1.0, 0.0],
                                         [0.5, 0.0, 0.5],
                                         [0.0, 1.0, 0.0]]))


@pytest.fixture(scope="session")
def rr50():
    return graphs.generate("random_regular", n=50, k=3, seed=11)


@pytest.fixture(scope="session")
def rr20():
    return graphs.generate("random_regular", n=20, k=3, seed=12)


@pytest.fixture(scope="session")
def prisoner31():
    return GameSpec(payoff=prisoner_payoff(3.0, 1.0), mutation=np.zeros(2), w=0.1)


@pytest.fixture(scope="session")
def neutral2():
    return GameSpec(payoff=np.zeros((2, 2)), mutation=np.zeros(2), w=0.0)
