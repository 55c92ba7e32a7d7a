import numpy as np
import pytest

from sddestab.model import InitialFunction, SddeSystem


def scalar(a, sigma=0.0, eta=0.0, b=0.0, mu=0.0):
    """One-dimensional system with a single Wiener process."""
    return SddeSystem.build(np.array([[a]]), B=np.array([[b]]), mu=np.array([[mu]]),
                            sigma=np.array([[[sigma]]]), eta=np.array([[[eta]]]))


def random_decoupled(rng, noise=0.5):
    A = np.diag(rng.uniform(-2.5, -1.0, 2)) + rng.uniform(-0.3, 0.3, (2, 2))
    B = rng.uniform(-0.3, 0.3, (2, 2))
    return SddeSystem.decoupled(A, B=B, mu=rng.uniform(-1, 1, 2),
                                sigma=rng.uniform(-noise, noise, (2, 2)), eta=rng.uniform(-noise, noise, (2, 2)))


@pytest.fixture
def ones2():
    return InitialFunction.constant([1.0, 1.0])


ACCEPTANCE = []  # one line per criterion, filled by test_acceptance.py


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
