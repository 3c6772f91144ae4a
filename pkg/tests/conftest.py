import numpy as np
import pytest

from regfrac import Interval, assemble, build_mesh

ACCEPTANCE_LINES = []


def record_acceptance(number, title, passed, detail):
    """Remember one acceptance outcome; printed once in the terminal summary."""
    line = f"acceptance {number:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def mesh128():
    return build_mesh(Interval(-1.0, 1.0), 128, 3.0)


@pytest.fixture(scope="session")
def reg128(mesh128):
    return assemble(mesh128, 0.75, "regional")


@pytest.fixture(scope="session")
def full128(mesh128):
    return assemble(mesh128, 0.75, "full")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
