import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fpcrboot.flrm import FunctionalDataset
from fpcrboot.hilbert import Curve, Grid

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], print_blob=True
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_dataset(rng, n=30, m=20, noise=1.0, grid=None):
    grid = grid or Grid.uniform(m)
    X = rng.standard_normal((n, m)).cumsum(axis=1) / np.sqrt(m)
    beta = np.sin(np.pi * grid.points)
    y = X @ (grid.weights * beta) + noise * rng.standard_normal(n)
    return FunctionalDataset.from_arrays(X, y, grid)


def random_curve(rng, grid):
    return Curve(grid, rng.standard_normal(grid.size))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
