import numpy as np
import pytest

from gnnplan.world import BoxObstacle, PointWorld, ProblemInstance


@pytest.fixture
def unit_square():
    return PointWorld(2, ((0.0, 0.0), (1.0, 1.0)))


@pytest.fixture
def wall_world():
    """Unit square with a vertical wall at x=0.5 and a gap around y=0.5."""
    return PointWorld(2, ((0.0, 0.0), (1.0, 1.0)), (
        BoxObstacle((0.5, 0.175), (0.03, 0.175)),
        BoxObstacle((0.5, 0.825), (0.03, 0.175)),
    ))


@pytest.fixture
def wall_problem(wall_world):
    return ProblemInstance(wall_world, (0.1, 0.5), (0.9, 0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def log(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
