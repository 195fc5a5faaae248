import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from latticehom.energy import EnergyModel, Quadratic, SitePotential
from latticehom.models import chain_with_soft, two_chains

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def exh1():
    return two_chains()


@pytest.fixture
def exh2():
    return chain_with_soft()


@pytest.fixture
def quad():
    return EnergyModel(2, Quadratic(), Quadratic())


@pytest.fixture
def quad_pinned():
    return EnergyModel(2, Quadratic(), Quadratic(), SitePotential(Quadratic(), 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
