import numpy as np
import pytest

from filterlab.fields import Grid2, SpectralField
from filterlab.probability import PriorSpec, sample_prior

# Filled by test_acceptance.py; printed once at the end of the session.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_LINES, key=int):
        terminalreporter.write_line(ACCEPTANCE_LINES[cid])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tg16():
    g = Grid2(16)
    return SpectralField.from_function(g, lambda X, Y: (np.sin(X) * np.cos(Y), -np.cos(X) * np.sin(Y)))


@pytest.fixture
def small_prior():
    spec = PriorSpec(alpha=2.0, k_max=8, radius=2.0, sigma=0.1)
    return spec, sample_prior(spec, 8, seed=5)
