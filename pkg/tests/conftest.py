from __future__ import annotations

import pytest

from stationary_heston import HestonParams
from stationary_heston.tree import build_tree

PENALIZED = dict(s0=100.0, r=-0.0032, q=0.00225, theta=0.02691, kappa=19.28, xi=1.15,
                 rho=-0.99)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction checks")
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def penalized() -> HestonParams:
    return HestonParams(**PENALIZED)


@pytest.fixture(scope="session")
def mild() -> HestonParams:
    """A Feller-satisfying parameter set with moderate correlation."""
    return HestonParams(s0=100.0, r=0.01, q=0.0, theta=0.04, kappa=3.0, xi=0.4, rho=-0.6)


@pytest.fixture(scope="session")
def small_tree(penalized):
    return build_tree(penalized, 0.5, 10, 12, 4)


@pytest.fixture(scope="session")
def mild_tree(mild):
    return build_tree(mild, 0.5, 8, 15, 5)
