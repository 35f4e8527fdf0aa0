"""Multi-robot reward collection (MRRC) as a Markov decision process.

A :class:`ProblemState` is an immutable value; :func:`step` returns a new
state.  Robots and tasks keep their integer ids for the whole episode;
served tasks are flagged dead rather than removed, so ids stay stable.

Timing convention: a robot that reaches its assigned task during the step
starting at ``clock`` serves it in that step and the reward uses the age
before the end-of-step increment.  A robot ``d >= 1`` cells away therefore
serves at age ``age + d - 1``.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .gridworld import CompletionTimeDistribution, Maze, MotionModel, Routing

Matching = frozenset  # of (robot_id, task_id) pairs

ENUMERATION_GUARD = 64


class InfeasibleAction(ValueError):
    pass


@dataclass(frozen=True)
class RewardRule:
    kind: str = "linear"
    lam: float = 0.99
    base: float = 200.0

    def __post_init__(self):
        if self.kind not in ("linear", "nonlinear"):
            raise ValueError(f"unknown reward kind {self.kind!r}")

    def __call__(self, age):
        return reward(self, age)


def reward(rule: RewardRule, age) -> float:
    if rule.kind == "linear":
        return max(rule.base - age, 0.0)
    return rule.lam ** age


def service_age(age: int, travel: float) -> float:
    """Age at which a task is served by a robot ``travel`` steps away."""
    return age + max(travel, 1) - 1


@dataclass(frozen=True, eq=False)
class World:
    """Everything that stays fixed over an episode: routing tables and reward rule."""
    routing: Routing
    rule: RewardRule = RewardRule()

    @property
    def maze(self) -> Maze:
        return self.routing.maze

    @property
    def deterministic(self) -> bool:
        return self.routing.deterministic

    @property
    def step_cap_base(self) -> int:
        return 10 * (self.maze.width + self.maze.height)


def make_world(maze: Maze, motion: MotionModel, rule: RewardRule = RewardRule(),
               n_samples: int = 100, seed: int = 0) -> World:
    return World(Routing(maze, motion, n_samples=n_samples, seed=seed), rule)


@dataclass(frozen=True)
class GraphInputs:
    """Raw numeric view of a state consumed by the Q-network.

    ``node_scalar`` is the per-task scalar concatenated before the value
    embedding; ``node_extra`` holds extra per-task inputs appended to the
    distance-embedding input.  Times are in environment units.
    """
    node_scalar: np.ndarray  # (n,)
    node_extra: np.ndarray  # (n, k)
    tt: np.ndarray  # (n, n, S) completion-time samples between tasks
    rt: np.ndarray  # (n_robots, n, S) robot-to-task completion-time samples

    @property
    def n_samples(self) -> int:
        return self.tt.shape[2]


@dataclass(frozen=True, eq=False)
class ProblemState:
    world: World
    robot_cells: tuple[int, ...]
    task_cells: tuple[int, ...]
    ages: tuple[int, ...]
    alive: tuple[bool, ...]
    committed: tuple[int, ...]  # task id per robot, -1 when idle
    clock: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_robots(self) -> int:
        return len(self.robot_cells)

    @property
    def task_ids(self) -> tuple[int, ...]:
        return tuple(i for i, a in enumerate(self.alive) if a)

    @property
    def free_robots(self) -> tuple[int, ...]:
        return tuple(range(self.n_robots))

    @property
    def open_tasks(self) -> tuple[int, ...]:
        return self.task_ids

    @property
    def forced_pairs(self) -> Matching:
        return Matching()

    @property
    def deterministic(self) -> bool:
        return self.world.deterministic

    def robots(self) -> list[tuple[int, tuple[int, int], bool, int]]:
        """(id, position, busy, committed task) per robot."""
        routing = self.world.routing
        return [(r, routing.cell_of(c), self.committed[r] >= 0, self.committed[r])
                for r, c in enumerate(self.robot_cells)]

    def tasks(self) -> list[tuple[int, tuple[int, int], int, bool]]:
        routing = self.world.routing
        return [(t, routing.cell_of(c), self.ages[t], self.alive[t])
                for t, c in enumerate(self.task_cells)]

    def rt_edge(self, robot: int, task: int) -> CompletionTimeDistribution:
        self._check_alive(task)
        return self.world.routing.distribution(self.robot_cells[robot], self.task_cells[task])

    def tt_edge(self, src: int, dst: int) -> CompletionTimeDistribution:
        self._check_alive(src)
        self._check_alive(dst)
        return self.world.routing.distribution(self.task_cells[src], self.task_cells[dst])

    def rt_edges(self) -> dict[tuple[int, int], CompletionTimeDistribution]:
        return {(r, t): self.rt_edge(r, t) for r in range(self.n_robots) for t in self.task_ids}

    def tt_edges(self) -> dict[tuple[int, int], CompletionTimeDistribution]:
        ids = self.task_ids
        return {(i, j): self.tt_edge(i, j) for i in ids for j in ids if i != j}

    def _check_alive(self, task: int):
        if not (0 <= task < len(self.alive) and self.alive[task]):
            raise InfeasibleAction(f"task {task} is not alive")

    def mean_time(self, robot: int, task: int) -> float:
        return self.world.routing.mean_time(self.robot_cells[robot], self.task_cells[task])

    def graph_inputs(self) -> GraphInputs:
        if "graph" not in self._cache:
            samples = self.world.routing.samples
            ids = list(self.task_ids)
            cells = np.asarray(self.task_cells, dtype=np.int64)[ids]
            robots = np.asarray(self.robot_cells, dtype=np.int64)
            self._cache["graph"] = GraphInputs(
                node_scalar=np.asarray(self.ages, dtype=float)[ids] / 100.0,
                node_extra=np.zeros((len(ids), 0)),
                tt=samples[cells[:, None], cells[None, :]].astype(float),
                rt=samples[robots[:, None], cells[None, :]].astype(float),
            )
        return self._cache["graph"]

    def to_json(self) -> str:
        routing = self.world.routing
        return json.dumps({
            "clock": self.clock,
            "robots": [{"cell": list(routing.cell_of(c)), "committed": k}
                       for c, k in zip(self.robot_cells, self.committed)],
            "tasks": [{"cell": list(routing.cell_of(c)), "age": a, "alive": al}
                      for c, a, al in zip(self.task_cells, self.ages, self.alive)],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, world: World, text: str) -> "ProblemState":
        data = json.loads(text)
        routing = world.routing
        return cls(
            world,
            robot_cells=tuple(routing.cell_index(tuple(r["cell"])) for r in data["robots"]),
            task_cells=tuple(routing.cell_index(tuple(t["cell"])) for t in data["tasks"]),
            ages=tuple(int(t["age"]) for t in data["tasks"]),
            alive=tuple(bool(t["alive"]) for t in data["tasks"]),
            committed=tuple(int(r["committed"]) for r in data["robots"]),
            clock=int(data["clock"]),
        )

    def fingerprint(self) -> tuple:
        return (self.robot_cells, self.task_cells, self.ages, self.alive, self.clock)


def initial_state(world: World, n_robots: int, n_tasks: int, age_range=(0, 100), seed=0) -> ProblemState:
    if n_robots < 1 or n_tasks < 1:
        raise ValueError("need at least one robot and one task")
    lo, hi = age_range
    if lo < 0 or hi < lo:
        raise ValueError(f"bad age range {age_range}")
    n_cells = world.routing.n_cells
    if n_robots + n_tasks > n_cells:
        raise ValueError(f"maze has {n_cells} open cells, need {n_robots + n_tasks}")
    rng = np.random.default_rng(seed)
    cells = rng.choice(n_cells, size=n_robots + n_tasks, replace=False)
    ages = rng.integers(lo, hi + 1, size=n_tasks)
    return ProblemState(
        world,
        robot_cells=tuple(int(c) for c in cells[:n_robots]),
        task_cells=tuple(int(c) for c in cells[n_robots:]),
        ages=tuple(int(a) for a in ages),
        alive=(True,) * n_tasks,
        committed=(-1,) * n_robots,
    )


def is_terminal(state) -> bool:
    return not any(state.alive)


def is_exhausted(state) -> bool:
    """True when tasks remain but none can still earn a positive reward.

    Rewards never increase with age, so from such a state every policy
    collects exactly zero.  Scheduling states have no such notion.
    """
    world = getattr(state, "world", None)
    if world is None or is_terminal(state):
        return False
    return all(reward(world.rule, state.ages[t]) <= 0 for t in state.task_ids)


def check_matching(state, action: Iterable) -> Matching:
    """Validate ``action`` as a maximal matching of free robots to open tasks."""
    action = Matching(action)
    robots, tasks = set(), set()
    free, open_ = set(state.free_robots), set(state.open_tasks)
    forced = state.forced_pairs
    for r, t in action:
        if r in robots or t in tasks:
            raise InfeasibleAction(f"robot {r} or task {t} matched twice")
        if (r, t) not in forced and (r not in free or t not in open_):
            raise InfeasibleAction(f"pair ({r}, {t}) is not assignable")
        robots.add(r)
        tasks.add(t)
    if not forced <= action:
        raise InfeasibleAction("action drops a locked assignment")
    if (free - robots) and (open_ - tasks):
        raise InfeasibleAction("matching is not maximal")
    return action


def enumerate_matchings(state) -> list[Matching]:
    """All maximal matchings of free robots to open tasks, each exactly once."""
    free = [r for r in state.free_robots if r not in {p[0] for p in state.forced_pairs}]
    open_ = [t for t in state.open_tasks if t not in {p[1] for p in state.forced_pairs}]
    if len(free) * len(open_) > ENUMERATION_GUARD:
        raise ValueError(f"{len(free)} robots x {len(open_)} tasks exceeds the enumeration guard")
    base = state.forced_pairs
    if len(free) <= len(open_):
        return [base | Matching(zip(free, perm)) for perm in itertools.permutations(open_, len(free))]
    return [base | Matching(zip(perm, open_)) for perm in itertools.permutations(free, len(open_))]


def step(state: ProblemState, action, rng: np.random.Generator | None = None):
    """Advance one time-step.  Returns ``(next_state, reward, served_task_ids)``."""
    if is_terminal(state):
        return state, 0.0, []
    action = check_matching(state, action)
    routing = state.world.routing
    target = dict(action)
    cells = list(state.robot_cells)
    movers = [r for r in range(state.n_robots) if r in target]
    served = []
    if movers:
        goals = [state.task_cells[target[r]] for r in movers]
        starts = [cells[r] for r in movers]
        moved = routing.move(starts, goals, rng)
        for r, s, g, m in zip(movers, starts, goals, moved):
            cells[r] = int(m)
            if s == g or m == g:
                served.append(target[r])
    total = float(sum(reward(state.world.rule, state.ages[t]) for t in served))
    served_set = set(served)
    alive = tuple(a and i not in served_set for i, a in enumerate(state.alive))
    ages = tuple(a + 1 if alive[i] else a for i, a in enumerate(state.ages))
    committed = tuple(-1 if target.get(r, -1) in served_set else target.get(r, -1)
                      for r in range(state.n_robots))
    nxt = replace(state, robot_cells=tuple(cells), ages=ages, alive=alive,
                  committed=committed, clock=state.clock + 1, _cache={})
    return nxt, total, sorted(served)


EPISODE_LOG_HEADER = ["clock", "action", "reward", "remaining"]


def format_action(action) -> str:
    return ";".join(f"{r}-{t}" for r, t in sorted(action))


def episode_log_csv(rows) -> str:
    """CSV text for ``(clock, action, reward, remaining)`` rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EPISODE_LOG_HEADER)
    for clock, action, rew, remaining in rows:
        writer.writerow([clock, format_action(action), repr(float(rew)), remaining])
    return buf.getvalue()


@dataclass(eq=False)
class MRRCEnv:
    """Episode factory used by the trainer: seeded initial states on a fixed world."""
    world: World
    n_robots: int
    n_tasks: int
    age_range: tuple[int, int] = (0, 100)
    reward_scale: float = 100.0

    def initial(self, seed) -> ProblemState:
        return initial_state(self.world, self.n_robots, self.n_tasks, self.age_range, seed)

    def step(self, state, action, rng=None):
        nxt, total, _ = step(state, action, rng)
        return nxt, total

    def step_cap(self, state) -> int:
        return self.world.step_cap_base * len(state.alive)


def run_episode(env, state, policy, rng=None, cap: int | None = None):
    """Roll ``policy(state) -> matching`` until terminal or ``cap`` steps.

    Returns ``(total_reward, steps, finished)``; the reward is unscaled.
    """
    cap = env.step_cap(state) if cap is None else cap
    total, steps = 0.0, 0
    while not is_terminal(state) and steps < cap:
        state, r = env.step(state, policy(state), rng)
        total += r
        steps += 1
    return total, steps, is_terminal(state)
