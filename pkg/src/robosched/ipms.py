"""Identical parallel machine scheduling with sequence-dependent setups.

Decisions are made at epochs, i.e. whenever some task finishes.  A machine
in its setup phase may be redirected (its partial setup is lost); a machine
in its processing phase is locked to its task.  The reward for learning is
minus the time elapsed between epochs, so the episode return is minus the
make-span.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .mrrc import GraphInputs, Matching, check_matching

IDLE, SETUP, PROCESSING = "idle", "setup", "processing"
PROC_RANGE = (16.0, 64.0)
SETUP_RANGE = (0.0, 32.0)
PROC_SCALE = 64.0


@dataclass(frozen=True, eq=False)
class IPMSInstance:
    n_machines: int
    proc: np.ndarray  # (n,)
    setup: np.ndarray  # (n, n), setup[i, j] = setup for j right after i
    initial_setup: np.ndarray  # (n,), setup for a task started on a fresh machine
    seed: int | None = None

    def __post_init__(self):
        n = len(self.proc)
        if self.n_machines < 1:
            raise ValueError("need at least one machine")
        if self.setup.shape != (n, n) or self.initial_setup.shape != (n,):
            raise ValueError("setup matrix shape does not match the task count")
        for arr in (self.proc, self.setup, self.initial_setup):
            arr.setflags(write=False)

    @property
    def n_tasks(self) -> int:
        return len(self.proc)

    def setup_time(self, prev: int, task: int) -> float:
        return float(self.initial_setup[task] if prev < 0 else self.setup[prev, task])

    def to_json(self) -> str:
        return json.dumps({"n_machines": self.n_machines, "proc": self.proc.tolist(),
                           "setup": self.setup.tolist(), "initial_setup": self.initial_setup.tolist(),
                           "seed": self.seed}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "IPMSInstance":
        d = json.loads(text)
        return cls(int(d["n_machines"]), np.asarray(d["proc"], dtype=float),
                   np.asarray(d["setup"], dtype=float), np.asarray(d["initial_setup"], dtype=float),
                   d.get("seed"))


def generate_instance(seed: int, n_machines: int, n_tasks: int, zero_setup: bool = False) -> IPMSInstance:
    if n_machines < 1 or n_tasks < 1:
        raise ValueError("counts must be >= 1")
    rng = np.random.default_rng(seed)
    proc = rng.uniform(*PROC_RANGE, size=n_tasks)
    setup = rng.uniform(*SETUP_RANGE, size=(n_tasks, n_tasks))
    initial = rng.uniform(*SETUP_RANGE, size=n_tasks)
    np.fill_diagonal(setup, 0.0)
    if zero_setup:
        setup[:] = 0.0
        initial[:] = 0.0
    return IPMSInstance(n_machines, proc, setup, initial, seed)


@dataclass(frozen=True, eq=False)
class IPMSState:
    instance: IPMSInstance
    phase: tuple[str, ...]
    task: tuple[int, ...]  # current task per machine, -1 when idle
    remaining: tuple[float, ...]  # time left in the current phase
    last: tuple[int, ...]  # last completed task per machine, -1 if none
    alive: tuple[bool, ...]  # unfinished tasks
    started: tuple[float, ...]  # clock at which the current setup began
    setup_end: tuple[float, ...]
    clock: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_robots(self) -> int:
        return self.instance.n_machines

    @property
    def task_ids(self) -> tuple[int, ...]:
        return tuple(i for i, a in enumerate(self.alive) if a)

    @property
    def free_robots(self) -> tuple[int, ...]:
        return tuple(m for m, ph in enumerate(self.phase) if ph != PROCESSING)

    @property
    def open_tasks(self) -> tuple[int, ...]:
        locked = {t for m, t in enumerate(self.task) if self.phase[m] == PROCESSING}
        return tuple(t for t in self.task_ids if t not in locked)

    @property
    def forced_pairs(self) -> Matching:
        return Matching((m, t) for m, t in enumerate(self.task) if self.phase[m] == PROCESSING)

    @property
    def deterministic(self) -> bool:
        return True

    def completion_time(self, machine: int, task: int) -> float:
        inst = self.instance
        if self.task[machine] == task and self.phase[machine] == PROCESSING:
            return self.remaining[machine]
        if self.task[machine] == task and self.phase[machine] == SETUP:
            return self.remaining[machine] + float(inst.proc[task])
        return inst.setup_time(self.last[machine], task) + float(inst.proc[task])

    def graph_inputs(self) -> GraphInputs:
        if "graph" not in self._cache:
            inst = self.instance
            ids = list(self.task_ids)
            n = len(ids)
            tt = inst.setup[np.ix_(ids, ids)] + inst.proc[ids][None, :]
            rt = np.array([[self.completion_time(m, t) for t in ids] for m in range(self.n_robots)])
            self._cache["graph"] = GraphInputs(
                node_scalar=inst.proc[ids] / PROC_SCALE,
                node_extra=np.full((n, 1), n / inst.n_tasks),
                tt=tt[:, :, None],
                rt=rt.reshape(self.n_robots, n, 1),
            )
        return self._cache["graph"]


def initial_ipms_state(instance: IPMSInstance) -> IPMSState:
    m = instance.n_machines
    return IPMSState(instance, phase=(IDLE,) * m, task=(-1,) * m, remaining=(0.0,) * m,
                     last=(-1,) * m, alive=(True,) * instance.n_tasks,
                     started=(0.0,) * m, setup_end=(0.0,) * m)


@dataclass(frozen=True)
class GanttRow:
    machine: int
    task: int
    start: float
    setup_end: float
    finish: float


def epoch_step(state: IPMSState, action) -> tuple[IPMSState, float, list[GanttRow]]:
    """Advance to the next task completion.  Returns ``(next, elapsed, finished_rows)``."""
    if not any(state.alive):
        return state, 0.0, []
    action = check_matching(state, action)
    inst = state.instance
    target = dict(action)
    m = state.n_robots
    phase, task, rem = list(state.phase), list(state.task), list(state.remaining)
    started, setup_end = list(state.started), list(state.setup_end)
    finish = [np.inf] * m
    for k in range(m):
        t = target.get(k, -1)
        if phase[k] == PROCESSING:
            finish[k] = rem[k]
            continue
        if t < 0:
            phase[k], task[k], rem[k] = IDLE, -1, 0.0
            continue
        if not (phase[k] == SETUP and task[k] == t):
            s = inst.setup_time(state.last[k], t)
            phase[k], task[k], rem[k] = SETUP, t, s
            started[k], setup_end[k] = state.clock, state.clock + s
        finish[k] = rem[k] + float(inst.proc[t])
    elapsed = min(finish)
    if not np.isfinite(elapsed):
        raise RuntimeError("no machine is busy but tasks remain")
    clock = state.clock + elapsed
    last, alive = list(state.last), list(state.alive)
    rows = []
    for k in range(m):
        if phase[k] == IDLE:
            continue
        if finish[k] == elapsed:
            rows.append(GanttRow(k, task[k], started[k], setup_end[k], clock))
            alive[task[k]] = False
            last[k] = task[k]
            phase[k], task[k], rem[k] = IDLE, -1, 0.0
        elif phase[k] == SETUP and rem[k] > elapsed:
            rem[k] -= elapsed
        else:
            phase[k], rem[k] = PROCESSING, finish[k] - elapsed
    nxt = replace(state, phase=tuple(phase), task=tuple(task), remaining=tuple(rem), last=tuple(last),
                  alive=tuple(alive), started=tuple(started), setup_end=tuple(setup_end),
                  clock=clock, _cache={})
    return nxt, elapsed, rows


def makespan(elapsed_times) -> float:
    total = 0.0
    for e in elapsed_times:
        total += e
    return total


def run_policy(instance: IPMSInstance, policy) -> tuple[float, list[GanttRow]]:
    """Roll ``policy(state) -> matching`` to completion; return make-span and Gantt rows."""
    state = initial_ipms_state(instance)
    elapsed, rows = [], []
    while any(state.alive):
        state, e, done = epoch_step(state, policy(state))
        elapsed.append(e)
        rows.extend(done)
    span = makespan(elapsed)
    assert span == state.clock
    return span, rows


def sequence_loads(instance: IPMSInstance, schedule) -> list[float]:
    loads = []
    for seq in schedule:
        total, prev = 0.0, -1
        for t in seq:
            total += instance.setup_time(prev, t) + float(instance.proc[t])
            prev = t
        loads.append(total)
    return loads


def schedule_makespan(instance: IPMSInstance, schedule) -> float:
    return max(sequence_loads(instance, schedule), default=0.0)


def lower_bounds(instance: IPMSInstance) -> tuple[float, float]:
    return float(instance.proc.max()), float(instance.proc.sum()) / instance.n_machines


GANTT_HEADER = ["machine", "task", "start", "setup_end", "finish"]


def gantt_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GANTT_HEADER)
    for r in sorted(rows, key=lambda r: (r.machine, r.start, r.task)):
        w.writerow([r.machine, r.task, repr(r.start), repr(r.setup_end), repr(r.finish)])
    return buf.getvalue()


@dataclass(eq=False)
class IPMSEnv:
    """Episode factory used by the trainer: one seeded instance per episode."""
    n_machines: int
    n_tasks: int
    reward_scale: float = PROC_SCALE
    zero_setup: bool = False

    def initial(self, seed) -> IPMSState:
        return initial_ipms_state(generate_instance(seed, self.n_machines, self.n_tasks, self.zero_setup))

    def step(self, state, action, rng=None):
        nxt, elapsed, _ = epoch_step(state, action)
        return nxt, -elapsed

    def step_cap(self, state) -> int:
        return 2 * state.instance.n_tasks + 1
