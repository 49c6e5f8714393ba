import numpy as np
import pytest

from balanced_sde.core import Commutativity, SdeSystem

ACCEPTANCE_LINES = []


def constant_system(a, sigma, levy=None, commutative=Commutativity.UNKNOWN, label="constant"):
    """System with state-independent coefficients: a (d,), sigma (d, m), levy (d, m, m)."""
    a = np.asarray(a, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    d, m = sigma.shape

    def drift(t, x):
        return np.broadcast_to(a, np.shape(x)[:-1] + (d,))

    def diffusion(t, x):
        return np.broadcast_to(sigma, np.shape(x)[:-1] + (d, m))

    lev = None
    if levy is not None:
        levy = np.asarray(levy, dtype=float)

        def lev(t, x):
            return np.broadcast_to(levy, np.shape(x)[:-1] + (d, m, m))

    return SdeSystem(d, m, drift, diffusion, lev, commutative=commutative, label=label)


@pytest.fixture
def zero_system():
    return constant_system([0.0], [[0.0]], levy=[[[0.0]]], commutative=Commutativity.YES, label="zero")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
