import functools

import numpy as np
import pytest

from robosched.gridworld import Maze, MotionModel, generate_maze
from robosched.mrrc import RewardRule, make_world


@functools.lru_cache(maxsize=None)
def world(kind="det", size=9, reward="linear", seed=3):
    maze = generate_maze(seed, size, size, 0.3)
    motion = MotionModel.deterministic() if kind == "det" else MotionModel.stochastic()
    return make_world(maze, motion, RewardRule(reward), n_samples=30, seed=seed)


@pytest.fixture
def det_world():
    return world("det")


@pytest.fixture
def stoch_world():
    return world("stoch")


CORRIDOR = "#####\n#   #\n#####\n"


@pytest.fixture
def corridor():
    return Maze.from_text(CORRIDOR)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated at the end of the run
CRITERIA: dict[int, str] = {}


def report(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
