import numpy as np
import pytest

from symtrack.core import BinaryMask, FrameGrid


@pytest.fixture
def grid():
    return FrameGrid(32, 24)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def disk(grid, cx, cy, r):
    yy, xx = np.mgrid[: grid.height, : grid.width]
    return BinaryMask.from_array((xx - cx) ** 2 + (yy - cy) ** 2 <= r * r)


def random_mask(rng, grid, density=None):
    p = rng.uniform(0.05, 0.95) if density is None else density
    return BinaryMask.from_array(rng.random((grid.height, grid.width)) < p)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
