"""Comparison policies: sequential greedy, exact search for tiny MRRC, IPMS local search."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ipms import IPMSInstance, schedule_makespan, sequence_loads
from .mrrc import Matching, reward, service_age

ORACLE_MAX_ROBOTS = 3
ORACLE_MAX_TASKS = 8


def sga_policy(state) -> Matching:
    """Sequential greedy matching on immediate estimated reward.

    The estimate for a (robot, task) pair is the reward at the age the task
    would be served using the mean completion time.  Ties go to the lowest
    robot id, then the lowest task id.
    """
    rule = state.world.rule
    robots, tasks = list(state.free_robots), list(state.open_tasks)
    value = np.array([[reward(rule, service_age(state.ages[t], state.mean_time(r, t))) for t in tasks]
                      for r in robots]).reshape(len(robots), len(tasks))
    pairs = set()
    for _ in range(min(len(robots), len(tasks))):
        i, j = np.unravel_index(int(np.argmax(value)), value.shape)
        pairs.add((robots[i], tasks[j]))
        value[i, :] = -np.inf
        value[:, j] = -np.inf
    return Matching(pairs)


def random_policy(rng: np.random.Generator):
    """Uniformly random maximal matching each step."""
    def policy(state) -> Matching:
        robots = list(state.free_robots)
        tasks = list(state.open_tasks)
        rng.shuffle(robots)
        rng.shuffle(tasks)
        return Matching(zip(robots, tasks))
    return policy


@dataclass(frozen=True)
class OracleResult:
    value: float
    first_action: Matching
    plan: tuple[tuple[int, ...], ...]  # task sequence per robot
    nodes: int


def exact_optimal(state, prune: bool = True) -> OracleResult:
    """Exact maximum total reward for a deterministic MRRC state.

    Depth-first search over service sequences: the robot that becomes free
    first either serves one more task or retires.  With ``prune`` on, node
    values are memoized on (unserved set, robot positions and free times)
    and children whose optimistic bound (every task served at the earliest
    time any robot could reach it) cannot beat the best sibling are skipped,
    which keeps the memoized values exact.  ``prune=False`` is plain
    enumeration.
    """
    if not state.deterministic:
        raise ValueError("exact_optimal needs deterministic motion")
    tasks = list(state.task_ids)
    if state.n_robots > ORACLE_MAX_ROBOTS or len(tasks) > ORACLE_MAX_TASKS:
        raise ValueError(f"oracle guard: at most {ORACLE_MAX_ROBOTS} robots and {ORACLE_MAX_TASKS} tasks")
    routing, rule = state.world.routing, state.world.rule
    n = len(tasks)
    cells = [state.task_cells[t] for t in tasks]
    dist = routing.dist
    horizon = (n + 1) * (int(dist.max()) + 1) + 2
    rwd = [[reward(rule, state.ages[t] + k) for k in range(horizon)] for t in tasks]
    counter = [0]

    def gain(cell, t, j):
        travel = max(int(dist[cell, cells[j]]), 1)
        return rwd[j][t + travel - 1], t + travel

    def bound(mask, robots):
        total = 0.0
        for j in range(n):
            if mask >> j & 1:
                total += max(gain(c, t, j)[0] for t, c in robots)
        return total

    def make_solver(use_memo, use_bound):
        memo = {}

        def solve(mask, robots):
            # robots: sorted tuple of (free_time, cell); the first entry acts next
            counter[0] += 1
            if mask == 0 or not robots:
                return 0.0
            key = (mask, robots)
            if use_memo and key in memo:
                return memo[key]
            (t, cell), rest = robots[0], robots[1:]
            best = solve(mask, rest)  # retire
            children = []
            for j in range(n):
                if mask >> j & 1:
                    g, t2 = gain(cell, t, j)
                    children.append((g, j, tuple(sorted(rest + ((t2, cells[j]),)))))
            if use_bound:
                children.sort(key=lambda c: -c[0])
            for g, j, nxt in children:
                sub = mask & ~(1 << j)
                if use_bound and g + bound(sub, nxt) <= best:
                    continue
                best = max(best, g + solve(sub, nxt))
            if use_memo:
                memo[key] = best
            return best
        return solve

    full = (1 << n) - 1
    start = tuple(sorted((0, state.robot_cells[r]) for r in range(state.n_robots)))
    value = make_solver(prune, prune)(full, start)
    nodes = counter[0]

    # recover one optimal plan with an exact memoized solver, tracking robot ids
    solve = make_solver(True, False)
    plan = {r: [] for r in range(state.n_robots)}
    mask, remaining = full, value
    active = sorted((0, state.robot_cells[r], r) for r in range(state.n_robots))
    key_of = lambda acts: tuple(sorted((tt, c) for tt, c, _ in acts))
    while mask and active:
        active.sort(key=lambda a: (a[0], a[1]))
        t, cell, r = active[0]
        for j in range(n):
            if mask >> j & 1:
                g, t2 = gain(cell, t, j)
                nxt = active[1:] + [(t2, cells[j], r)]
                if abs(g + solve(mask & ~(1 << j), key_of(nxt)) - remaining) < 1e-9:
                    plan[r].append(tasks[j])
                    remaining -= g
                    mask &= ~(1 << j)
                    active = nxt
                    break
        else:
            active = active[1:]  # this robot retires
    first = {r: seq[0] for r, seq in plan.items() if seq}
    # complete to a maximal matching; extra robots can only serve tasks earlier
    spare = [t for t in tasks if t not in first.values()]
    for r in range(state.n_robots):
        if r not in first and spare:
            first[r] = spare.pop(0)
    return OracleResult(float(value), Matching(first.items()),
                        tuple(tuple(plan[r]) for r in range(state.n_robots)), nodes)


def plan_policy(plan):
    """Follow fixed per-robot task sequences: each robot heads to its first unserved task."""
    def policy(state) -> Matching:
        pairs = {}
        for r, seq in enumerate(plan):
            for t in seq:
                if state.alive[t]:
                    pairs[r] = t
                    break
        used = set(pairs.values())
        spare = [t for t in state.task_ids if t not in used]
        for r in state.free_robots:
            if r not in pairs and spare:
                pairs[r] = spare.pop(0)
        return Matching(pairs.items())
    return policy


def state_hash(state) -> str:
    payload = json.dumps([state.world.maze.to_text(), state.world.rule.kind, state.world.rule.lam,
                          state.to_json()], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:20]


class OracleCache:
    """Disk cache of oracle values keyed by instance hash."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.data = {}
        if self.path and self.path.exists():
            self.data = json.loads(self.path.read_text())

    def value(self, state) -> float:
        key = state_hash(state)
        if key not in self.data:
            self.data[key] = exact_optimal(state).value
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.write_text(json.dumps(self.data, sort_keys=True, indent=0))
        return self.data[key]


# ---------------------------------------------------------------------------
# IPMS

def _greedy_schedule(instance: IPMSInstance, order) -> list[list[int]]:
    schedule = [[] for _ in range(instance.n_machines)]
    loads = [0.0] * instance.n_machines
    for t in order:
        finish = [loads[m] + instance.setup_time(schedule[m][-1] if schedule[m] else -1, t)
                  + float(instance.proc[t]) for m in range(instance.n_machines)]
        m = int(np.argmin(finish))
        schedule[m].append(int(t))
        loads[m] = finish[m]
    return schedule


def _seq_load(instance, seq) -> float:
    return sequence_loads(instance, [seq])[0]


def _local_search(instance: IPMSInstance, schedule):
    """First-improvement descent on (make-span, total load)."""
    loads = sequence_loads(instance, schedule)

    def score(ls):
        return (max(ls), sum(ls))

    current = score(loads)
    m = instance.n_machines
    improved = True
    while improved:
        improved = False
        # relocate one task (also covers moves within a machine)
        for a in range(m):
            for i in range(len(schedule[a])):
                t = schedule[a][i]
                src = schedule[a][:i] + schedule[a][i + 1:]
                src_load = _seq_load(instance, src)
                for b in range(m):
                    base = src if b == a else schedule[b]
                    for j in range(len(base) + 1):
                        if b == a and j == i:
                            continue
                        dst = base[:j] + [t] + base[j:]
                        new = list(loads)
                        new[a] = src_load
                        new[b] = _seq_load(instance, dst)
                        cand = score(new)
                        if cand < current:
                            if b != a:
                                schedule[a] = src
                            schedule[b] = dst
                            loads, current, improved = new, cand, True
                            break
                    if improved:
                        break
                if improved:
                    break
            if improved:
                break
        if improved:
            continue
        # swap two tasks on different machines
        for a in range(m):
            for b in range(a + 1, m):
                for i in range(len(schedule[a])):
                    for j in range(len(schedule[b])):
                        sa, sb = list(schedule[a]), list(schedule[b])
                        sa[i], sb[j] = sb[j], sa[i]
                        new = list(loads)
                        new[a], new[b] = _seq_load(instance, sa), _seq_load(instance, sb)
                        cand = score(new)
                        if cand < current:
                            schedule[a], schedule[b] = sa, sb
                            loads, current, improved = new, cand, True
                            break
                    if improved:
                        break
                if improved:
                    break
            if improved:
                break
        if improved:
            continue
        # swap adjacent tasks on one machine
        for a in range(m):
            for i in range(len(schedule[a]) - 1):
                sa = list(schedule[a])
                sa[i], sa[i + 1] = sa[i + 1], sa[i]
                new = list(loads)
                new[a] = _seq_load(instance, sa)
                cand = score(new)
                if cand < current:
                    schedule[a] = sa
                    loads, current, improved = new, cand, True
                    break
            if improved:
                break
    return schedule


def ipms_local_search(instance: IPMSInstance, restarts: int = 10, seed: int = 0, history: list | None = None):
    """Greedy list scheduling from random task orders, each followed by local search.

    Returns ``(schedule, makespan)`` for the best restart.  ``history``, if
    given, receives the best-so-far make-span after every restart.
    """
    rng = np.random.default_rng(seed)
    best, best_span = None, np.inf
    for _ in range(max(restarts, 1)):
        order = rng.permutation(instance.n_tasks)
        schedule = _local_search(instance, _greedy_schedule(instance, order))
        span = schedule_makespan(instance, schedule)
        if span < best_span:
            best, best_span = schedule, span
        if history is not None:
            history.append(best_span)
    return best, float(best_span)
