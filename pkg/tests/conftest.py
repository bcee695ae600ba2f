import numpy as np
import pytest

from vistrack.world import Box, Cylinder, WorldConfig, build_grid


@pytest.fixture(scope="session")
def empty_grid():
    return build_grid(WorldConfig((0.0, 0.0, 0.0), (4.0, 4.0, 2.0), resolution=0.1))


@pytest.fixture(scope="session")
def wall_grid():
    # wall across y at x in [2.0, 2.2], full height, leaving no gap
    cfg = WorldConfig(
        (0.0, 0.0, 0.0),
        (4.0, 4.0, 2.0),
        resolution=0.1,
        boxes=(Box((2.01, -1.0, -1.0), (2.19, 5.0, 3.0)),),
    )
    return build_grid(cfg)


@pytest.fixture(scope="session")
def pillar_grid():
    cfg = WorldConfig(
        (0.0, 0.0, 0.0),
        (10.0, 10.0, 3.0),
        resolution=0.1,
        inflation_radius=0.2,
        cylinders=(Cylinder((5.0, 5.0), 0.8, 0.0, 3.0),),
    )
    return build_grid(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
