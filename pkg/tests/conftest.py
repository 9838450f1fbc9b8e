import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nelsonlab import fock
from nelsonlab.manybody import SpatialGrid

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def tiny():
    """N-agnostic small instance: 4 nodes on [0, 2pi), modes k = +-1, n_max = 3."""
    grid = SpatialGrid(1, 2 * math.pi, 4)
    modes = fock.make_mode_grid(1, 2 * math.pi, 1.5, 0.0)
    basis = fock.make_fock_basis(modes.n_modes, 3)
    return grid, modes, basis


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record and print the one-line verdict of an acceptance criterion."""

    def report(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
