"""Auction-based joint assignment driven by a Q-function.

Each round, every unassigned robot bids for the task that maximizes
``Q(s, Y + (robot, task))`` while ignoring the other unassigned robots; the
auctioneer commits the single best bid to ``Y``.  Rounds repeat until no
edge can be added.

``q_fn`` is any callable mapping a list of (partial) matchings of one state
to an array of values, e.g. ``QEvaluator(params, state, rng).evaluate``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .mrrc import Matching, enumerate_matchings

QFunction = Callable[[Sequence[Matching]], np.ndarray]


@dataclass(frozen=True)
class PartialMatching:
    pairs: Matching
    round: int = 0

    @property
    def robots(self) -> set[int]:
        return {r for r, _ in self.pairs}

    @property
    def tasks(self) -> set[int]:
        return {t for _, t in self.pairs}


@dataclass(frozen=True)
class Bid:
    robot: int
    task: int
    value: float


def _unassigned(state, partial: PartialMatching):
    robots = [r for r in state.free_robots if r not in partial.robots]
    tasks = [t for t in state.open_tasks if t not in partial.tasks]
    return robots, tasks


def best_bid(robot: int, partial: PartialMatching, state, q_fn: QFunction) -> Bid | None:
    if robot in partial.robots:
        raise ValueError(f"robot {robot} is already assigned")
    _, tasks = _unassigned(state, partial)
    if not tasks:
        return None
    values = np.asarray(q_fn([partial.pairs | {(robot, t)} for t in tasks]), dtype=float)
    k = int(np.argmax(values))
    return Bid(robot, tasks[k], float(values[k]))


def adp_select(state, q_fn: QFunction, trace: list | None = None) -> Matching:
    """Build a maximal matching by repeated bidding and consensus.

    All bids of a round go to ``q_fn`` in one call ordered by (robot, task),
    so the first maximum is the tie-break winner: lowest robot id, then
    lowest task id.
    """
    partial = PartialMatching(Matching(state.forced_pairs))
    while True:
        robots, tasks = _unassigned(state, partial)
        if not robots or not tasks:
            return partial.pairs
        cands = [(r, t) for r in robots for t in tasks]
        values = np.asarray(q_fn([partial.pairs | {c} for c in cands]), dtype=float)
        k = int(np.argmax(values))
        if trace is not None:
            nt = len(tasks)
            bids = []
            for i, r in enumerate(robots):
                j = int(np.argmax(values[i * nt:(i + 1) * nt]))
                bids.append([r, tasks[j], float(values[i * nt + j])])
            trace.append({"round": partial.round, "bids": bids,
                          "winner": [cands[k][0], cands[k][1], float(values[k])]})
        partial = PartialMatching(partial.pairs | {cands[k]}, partial.round + 1)


def count_q_evals(state) -> int:
    forced = state.forced_pairs
    n_r = len([r for r in state.free_robots if r not in {p[0] for p in forced}])
    n_t = len([t for t in state.open_tasks if t not in {p[1] for p in forced}])
    return sum((n_r - k) * (n_t - k) for k in range(min(n_r, n_t)))


def max_select(state, q_fn: QFunction) -> Matching:
    """Exhaustive argmax over all maximal matchings (small states only)."""
    actions = enumerate_matchings(state)
    values = np.asarray(q_fn(actions), dtype=float)
    # enumeration order is arbitrary; break ties on the sorted pair list
    best = values.max()
    return min((a for a, v in zip(actions, values) if v == best), key=lambda a: sorted(a))


def trace_jsonl(trace: list) -> str:
    return "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in trace)
