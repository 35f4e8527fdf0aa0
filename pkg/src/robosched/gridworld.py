"""Seeded maze world, robot motion models and routing tables.

Cells are addressed as ``(row, col)``.  A :class:`Routing` object bundles
everything the scheduling layer needs about a maze: shortest paths,
optimal stochastic routing policies and stored samples of task-completion
times for every ordered pair of open cells.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Cell = tuple[int, int]

# N, E, S, W
DIRECTIONS = np.array([(-1, 0), (0, 1), (1, 0), (0, -1)])

VI_MAX_SWEEPS = 10_000
VI_TOL = 1e-9
DEFAULT_ROUTE_SAMPLES = 100


class MazeError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Maze:
    width: int
    height: int
    walls: np.ndarray  # (height, width) bool, True = wall
    dotted: np.ndarray  # (height, width) bool
    seed: int = 0

    def __post_init__(self):
        self.walls.setflags(write=False)
        self.dotted.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, Maze):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and \
            np.array_equal(self.walls, other.walls) and np.array_equal(self.dotted, other.dotted)

    def __hash__(self):
        return hash((self.width, self.height, self.walls.tobytes(), self.dotted.tobytes()))

    def is_open(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width and not self.walls[r, c]

    def open_cells(self) -> list[Cell]:
        rows, cols = np.nonzero(~self.walls)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]

    def to_text(self) -> str:
        rows = []
        for r in range(self.height):
            rows.append("".join(
                "#" if self.walls[r, c] else ("." if self.dotted[r, c] else " ")
                for c in range(self.width)))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str, seed: int = 0) -> "Maze":
        lines = text.rstrip("\n").split("\n")
        height, width = len(lines), max(len(line) for line in lines)
        walls = np.zeros((height, width), dtype=bool)
        dotted = np.zeros((height, width), dtype=bool)
        for r, line in enumerate(lines):
            line = line.ljust(width)
            for c, ch in enumerate(line):
                if ch == "#":
                    walls[r, c] = True
                elif ch == ".":
                    dotted[r, c] = True
                elif ch != " ":
                    raise MazeError(f"unknown maze character {ch!r} at ({r}, {c})")
        return cls(width, height, walls, dotted, seed)


def generate_maze(seed: int, width: int, height: int, dot_density: float = 0.3) -> Maze:
    """Carve a perfect maze with randomized depth-first search.

    Lattice nodes sit on odd coordinates, so ``width`` and ``height`` must be
    odd and at least 5.  Each corridor cell is then dotted independently with
    probability ``dot_density``.
    """
    for name, n in (("width", width), ("height", height)):
        if n < 5 or n % 2 == 0:
            raise MazeError(f"{name} must be odd and >= 5, got {n}")
    if not 0.0 <= dot_density <= 1.0:
        raise MazeError(f"dot_density must lie in [0, 1], got {dot_density}")

    rng = np.random.default_rng(seed)
    walls = np.ones((height, width), dtype=bool)
    start = (2 * int(rng.integers((height - 1) // 2)) + 1, 2 * int(rng.integers((width - 1) // 2)) + 1)
    walls[start] = False
    stack = [start]
    while stack:
        r, c = stack[-1]
        options = []
        for dr, dc in DIRECTIONS:
            nr, nc = r + 2 * dr, c + 2 * dc
            if 0 < nr < height - 1 and 0 < nc < width - 1 and walls[nr, nc]:
                options.append((nr, nc, dr, dc))
        if not options:
            stack.pop()
            continue
        nr, nc, dr, dc = options[int(rng.integers(len(options)))]
        walls[r + dr, c + dc] = False
        walls[nr, nc] = False
        stack.append((nr, nc))

    dotted = (~walls) & (rng.random((height, width)) < dot_density)
    return Maze(width, height, walls, dotted, seed)


@dataclass(frozen=True)
class MotionModel:
    """Probability of the intended move and of each of the 3 other moves.

    Probabilities depend on whether the robot's current cell is dotted.
    """
    mode: str = "deterministic"
    dotted_probs: tuple[float, float] = (0.55, 0.15)
    plain_probs: tuple[float, float] = (0.70, 0.10)

    def __post_init__(self):
        if self.mode not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown motion mode {self.mode!r}")
        for intended, other in (self.dotted_probs, self.plain_probs):
            if min(intended, other) < 0 or abs(intended + 3 * other - 1.0) > 1e-12:
                raise ValueError("motion probabilities must be non-negative and sum to 1")

    @classmethod
    def deterministic(cls) -> "MotionModel":
        return cls("deterministic", (1.0, 0.0), (1.0, 0.0))

    @classmethod
    def stochastic(cls) -> "MotionModel":
        return cls("stochastic")

    @property
    def is_deterministic(self) -> bool:
        return self.mode == "deterministic" or (self.dotted_probs[0] == 1.0 and self.plain_probs[0] == 1.0)

    def probs(self, dotted: bool) -> tuple[float, float]:
        if self.mode == "deterministic":
            return (1.0, 0.0)
        return self.dotted_probs if dotted else self.plain_probs


@dataclass(frozen=True)
class CompletionTimeDistribution:
    origin: Cell
    destination: Cell
    samples: tuple[int, ...]

    def __post_init__(self):
        if not self.samples:
            raise ValueError("a completion-time distribution needs at least one sample")

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))


class _Graph:
    """Cell indexing plus the per-cell move/outcome tables used by all routines."""

    def __init__(self, maze: Maze, motion: MotionModel):
        self.maze = maze
        self.motion = motion
        self.cells = np.array(maze.open_cells(), dtype=np.int64).reshape(-1, 2)
        self.index = np.full((maze.height, maze.width), -1, dtype=np.int64)
        self.index[self.cells[:, 0], self.cells[:, 1]] = np.arange(len(self.cells))
        n = len(self.cells)
        # neighbour reached by moving in each direction; walls leave the robot in place
        self.moves = np.empty((n, 4), dtype=np.int64)
        for k, (dr, dc) in enumerate(DIRECTIONS):
            rr, cc = self.cells[:, 0] + dr, self.cells[:, 1] + dc
            ok = (rr >= 0) & (rr < maze.height) & (cc >= 0) & (cc < maze.width)
            target = np.full(n, -1, dtype=np.int64)
            target[ok] = self.index[rr[ok], cc[ok]]
            self.moves[:, k] = np.where(target >= 0, target, np.arange(n))
        # outcome[c, a, o]: probability of moving in direction o when intending a
        self.outcome = np.empty((n, 4, 4))
        for i, (r, c) in enumerate(self.cells):
            intended, other = motion.probs(bool(maze.dotted[r, c]))
            self.outcome[i] = np.full((4, 4), other) + np.eye(4) * (intended - other)
        self.cum_outcome = np.cumsum(self.outcome, axis=2)

    def cell_index(self, cell: Cell) -> int:
        if not self.maze.is_open(cell):
            raise MazeError(f"cell {cell} is not an open maze cell")
        return int(self.index[cell])

    def bfs(self, source: int) -> np.ndarray:
        dist = np.full(len(self.cells), -1, dtype=np.int64)
        dist[source] = 0
        frontier = [source]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.moves[u]:
                    if dist[v] < 0:
                        dist[v] = dist[u] + 1
                        nxt.append(int(v))
            frontier = nxt
        return dist

    def value_iteration(self, goals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Expected steps-to-goal and greedy actions for a batch of goals.

        Returns ``(values, actions)``, both shaped ``(len(goals), n_cells)``.
        """
        n = len(self.cells)
        goals = np.asarray(goals, dtype=np.int64)
        # start from the deterministic distances: a lower bound, so sweeps increase monotonically
        values = np.stack([self.bfs(int(g)) for g in goals]).astype(float)
        rows = np.arange(len(goals))
        residual = np.inf
        for _ in range(VI_MAX_SWEEPS):
            q = 1.0 + np.einsum("cao,gco->gca", self.outcome, values[:, self.moves])
            new = q.min(axis=2)
            new[rows, goals] = 0.0
            residual = float(np.max(np.abs(new - values)))
            values = new
            if residual < VI_TOL:
                break
        else:
            raise ConvergenceError(f"value iteration did not converge: residual {residual:.3e}")
        q = 1.0 + np.einsum("cao,gco->gca", self.outcome, values[:, self.moves])
        # lowest direction index among near-ties, for reproducible routing
        actions = np.argmax(q <= q.min(axis=2, keepdims=True) + 1e-9, axis=2)
        return values, actions

    def rollout(self, starts: np.ndarray, goal: int, actions: np.ndarray, rng: np.random.Generator,
                max_steps: int = 1_000_000) -> np.ndarray:
        """Step independent walkers under ``actions`` until each reaches ``goal``."""
        pos = np.array(starts, dtype=np.int64)
        times = np.zeros(len(pos), dtype=np.int64)
        active = pos != goal
        for _ in range(max_steps):
            if not active.any():
                return times
            idx = np.nonzero(active)[0]
            c = pos[idx]
            a = actions[c]
            u = rng.random(len(idx))
            o = np.minimum((u[:, None] >= self.cum_outcome[c, a]).sum(axis=1), 3)
            pos[idx] = self.moves[c, o]
            times[idx] += 1
            active[idx] = pos[idx] != goal
        raise ConvergenceError(f"rollouts did not reach goal within {max_steps} steps")


def shortest_time_det(maze: Maze, start: Cell, goal: Cell) -> int:
    graph = _Graph(maze, MotionModel.deterministic())
    s, g = graph.cell_index(start), graph.cell_index(goal)
    d = graph.bfs(s)[g]
    if d < 0:
        raise MazeError(f"{goal} is unreachable from {start}")
    return int(d)


def expected_time_stoch(maze: Maze, motion: MotionModel, goal: Cell) -> np.ndarray:
    """Per-cell expected arrival time at ``goal`` under the optimal routing policy.

    Wall cells hold ``inf``.
    """
    graph = _Graph(maze, motion)
    g = graph.cell_index(goal)
    values, _ = graph.value_iteration(np.array([g]))
    out = np.full((maze.height, maze.width), np.inf)
    out[graph.cells[:, 0], graph.cells[:, 1]] = values[0]
    return out


def sample_completion_times(maze: Maze, motion: MotionModel, start: Cell, goal: Cell, count: int,
                            rng: np.random.Generator) -> CompletionTimeDistribution:
    if count < 1:
        raise ValueError("count must be >= 1")
    graph = _Graph(maze, motion)
    s, g = graph.cell_index(start), graph.cell_index(goal)
    if motion.is_deterministic:
        d = int(graph.bfs(s)[g])
        return CompletionTimeDistribution(start, goal, (d,) * count)
    _, actions = graph.value_iteration(np.array([g]))
    times = graph.rollout(np.full(count, s), g, actions[0], rng)
    return CompletionTimeDistribution(start, goal, tuple(int(t) for t in times))


@dataclass(eq=False)
class Routing:
    """All-pairs routing tables for one maze and motion model.

    ``samples[a, b]`` holds stored completion-time samples from open cell
    index ``a`` to open cell index ``b``.  In deterministic mode a single
    sample (the shortest-path length) is stored per pair.
    """
    maze: Maze
    motion: MotionModel
    n_samples: int = DEFAULT_ROUTE_SAMPLES
    seed: int = 0
    graph: _Graph = field(init=False, repr=False)

    def __post_init__(self):
        self.graph = _Graph(self.maze, self.motion)
        n = self.n_cells
        self.dist = np.stack([self.graph.bfs(g) for g in range(n)], axis=1)  # dist[start, goal]
        if self.dist.min() < 0:
            raise MazeError("maze is not connected")
        # deterministic next hop toward each goal: first direction that decreases the distance
        nb_dist = self.dist[self.graph.moves, :]  # (cell, dir, goal)
        self.det_action = np.argmax(nb_dist == (self.dist[:, None, :] - 1), axis=1).T  # (goal, cell)
        if self.deterministic:
            self.expected = self.dist.T.astype(float)
            self.action = self.det_action
            self.samples = self.dist[:, :, None].astype(np.int32)
        else:
            self.expected, self.action = self.graph.value_iteration(np.arange(n))
            self.samples = np.empty((n, n, self.n_samples), dtype=np.int32)
            children = np.random.SeedSequence(self.seed).spawn(n)
            starts = np.repeat(np.arange(n), self.n_samples)
            for g in range(n):
                rng = np.random.default_rng(children[g])
                times = self.graph.rollout(starts, g, self.action[g], rng)
                self.samples[:, g, :] = times.reshape(n, self.n_samples)
        self.samples.setflags(write=False)

    @property
    def deterministic(self) -> bool:
        return self.motion.is_deterministic

    @property
    def n_cells(self) -> int:
        return len(self.graph.cells)

    @property
    def cells(self) -> np.ndarray:
        return self.graph.cells

    def cell_index(self, cell: Cell) -> int:
        return self.graph.cell_index(cell)

    def cell_of(self, index: int) -> Cell:
        r, c = self.graph.cells[index]
        return int(r), int(c)

    def distribution(self, start: int, goal: int) -> CompletionTimeDistribution:
        return CompletionTimeDistribution(self.cell_of(start), self.cell_of(goal),
                                          tuple(int(t) for t in self.samples[start, goal]))

    def mean_time(self, start: int, goal: int) -> float:
        return float(self.samples[start, goal].mean())

    def move(self, cells: Sequence[int], goals: Sequence[int], rng: np.random.Generator | None) -> np.ndarray:
        """Advance robots one step toward their goals under the motion model."""
        cells = np.asarray(cells, dtype=np.int64)
        goals = np.asarray(goals, dtype=np.int64)
        if self.deterministic:
            nxt = self.graph.moves[cells, self.det_action[goals, cells]]
        else:
            a = self.action[goals, cells]
            u = rng.random(len(cells))
            o = np.minimum((u[:, None] >= self.graph.cum_outcome[cells, a]).sum(axis=1), 3)
            nxt = self.graph.moves[cells, o]
        return np.where(cells == goals, cells, nxt)
