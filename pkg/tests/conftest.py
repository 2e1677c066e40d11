import numpy as np
import pytest

from rapidmix.hamiltonian import GibbsEnsemble, build_potential
from rapidmix.lattice import build_graph


def chain(n, kind="ising", beta=0.5, **params):
    if kind == "ising":
        params.setdefault("J", 1.0)
        params.setdefault("g", 0.5)
    return GibbsEnsemble(build_potential(build_graph("chain", n=n), kind, **params), beta)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
