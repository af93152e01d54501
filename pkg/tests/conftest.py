import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nlstrap.ground_states import BoundStateBranch, Nonlinearity
from nlstrap.operator_lab import Grid, Hamiltonian, Potential, discrete_eigenpair

settings.register_profile("nlstrap", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow,
                                                 HealthCheck.function_scoped_fixture])
settings.load_profile("nlstrap")


class Lab:
    """Small generic setup: V = -sech^2, p = 2, focusing."""

    def __init__(self, L=30.0, n=601, stencil="fd2", depth=1.0, p=2.0, sigma=-1.0):
        self.grid = Grid(L, n)
        self.V = Potential.sech2(depth, 1.0)
        self.op = Hamiltonian(self.grid, self.V, stencil)
        self.spec = discrete_eigenpair(self.op)
        self.nl = Nonlinearity(p, sigma)
        self.branch = BoundStateBranch(self.op, self.spec, self.nl)

    @property
    def x(self):
        return self.grid.x


@pytest.fixture(scope="session")
def lab():
    return Lab()


@pytest.fixture(scope="session")
def lab_fine():
    return Lab(L=40.0, n=2049)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(rng, n, scale=1.0):
    return scale * (rng.normal(size=n) + 1j * rng.normal(size=n))


def smooth_field(rng, x, bumps=3, spread=6.0):
    u = np.zeros(x.size, dtype=complex)
    for _ in range(bumps):
        c = rng.uniform(-spread, spread)
        w = rng.uniform(0.6, 2.0)
        u += (rng.normal() + 1j * rng.normal()) * np.exp(-0.5 * ((x - c) / w) ** 2 + 1j * rng.uniform(-1.5, 1.5) * x)
    return u
