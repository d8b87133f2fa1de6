import numpy as np
import pytest

from aet.mesh import generate_disk_mesh


@pytest.fixture(scope="session")
def tiny_mesh():
    # 37 nodes, small enough for dense oracles
    return generate_disk_mesh(0.5, 0.3)


@pytest.fixture(scope="session")
def small_mesh():
    return generate_disk_mesh(0.5, 1 / 8)


@pytest.fixture(scope="session")
def mesh16():
    return generate_disk_mesh(0.5, 1 / 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def verdicts():
    """Collects the one-line PASS/FAIL verdict of each acceptance criterion."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
