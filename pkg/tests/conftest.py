import math

import pytest

from haostar.model import make_random_problem
from haostar.rover import make_rover_problem, oversubscribed_params, round_trip_params, toy_params

# Seeds whose random instance has a nontrivial reachable set (>= 20 hybrid
# states, >= 3 discrete states, positive optimum).
SUITE_SEEDS = [0, 1, 4, 5, 6, 7, 8, 9, 11, 13, 14, 15, 18, 19, 20, 23, 24, 26, 27, 28, 32, 34, 36, 37]
HORIZONS = [1, 2, 5, 7, math.inf]

VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    VERDICTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy():
    return make_rover_problem(toy_params())


@pytest.fixture(scope="session")
def toy_det():
    return make_rover_problem(toy_params(stochastic=False, max_resources=(40.0, 30.0)))


@pytest.fixture(scope="session")
def round_trip():
    return make_rover_problem(round_trip_params())


@pytest.fixture(scope="session")
def oversubscribed():
    return make_rover_problem(oversubscribed_params(18.0))


@pytest.fixture(scope="session")
def random_problems():
    return {s: make_random_problem(s) for s in SUITE_SEEDS}
