"""Shared fixtures: small grids, physics parameters, random states."""
import math
import sys

import numpy as np
import pytest

from nmshallow.fourier_scale import GridSpec, random_field
from nmshallow.green_naghdi import GNState, PhysicalParams


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the per-criterion verdict lines of the acceptance gate."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CRITERION_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def grid1d():
    return GridSpec(dimension=1, nodes_per_axis=64, domain_length=2 * math.pi)


@pytest.fixture
def grid2d():
    return GridSpec(dimension=2, nodes_per_axis=16, domain_length=2 * math.pi)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def params1d(grid1d, rng):
    bathy = random_field(grid1d, 1, rng, amplitude=0.05, decay=5.0)
    return PhysicalParams(mu=0.3, eps=0.5, b=bathy)


@pytest.fixture
def state1d(grid1d, rng):
    return GNState(
        V=random_field(grid1d, 1, rng, amplitude=0.1, decay=4.0),
        zeta=random_field(grid1d, 1, rng, amplitude=0.1, decay=4.0),
    )
