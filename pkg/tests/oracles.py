"""Independent reference computations used by the tests.

Everything here is written from scratch in plain Python (loops, no shared
helpers with the package) so agreement with the package is evidence.
"""
from __future__ import annotations

import itertools
import math
from collections import deque


def bfs_distance(text: str, start, goal) -> int:
    grid = text.rstrip("\n").split("\n")
    seen = {start: 0}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        if (r, c) == goal:
            return seen[(r, c)]
        for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < len(grid) and 0 <= nc < len(grid[nr]) and grid[nr][nc] != "#" and (nr, nc) not in seen:
                seen[(nr, nc)] = seen[(r, c)] + 1
                queue.append((nr, nc))
    raise ValueError("unreachable")


def flood_fill_size(text: str) -> tuple[int, int]:
    """(open cells, open cells reachable from the first open cell)."""
    grid = text.rstrip("\n").split("\n")
    cells = [(r, c) for r, row in enumerate(grid) for c, ch in enumerate(row) if ch != "#"]
    seen = {cells[0]}
    stack = [cells[0]]
    while stack:
        r, c = stack.pop()
        for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1)):
            nxt = (r + dr, c + dc)
            if nxt in set(cells) and nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(cells), len(seen)


def corridor_expected_times(p_ok: float, p_other: float) -> tuple[float, float]:
    """Expected steps to the right end of a 1x3 corridor from the middle and far cells.

    Only the intended move (east) advances; a west slip moves back from the
    middle cell and bumps the wall from the far cell; north/south slips bump.
    Solves  t1 = 1 + p_ok*0 + p_other*t0 + (1-p_ok-p_other)*t1
            t0 = 1 + p_ok*t1 + (1-p_ok)*t0
    """
    # from t0: t0 = 1/p_ok + t1
    # t1 (p_ok + p_other) = 1 + p_other * (1/p_ok + t1)  ->  t1 * p_ok = 1 + p_other/p_ok
    t1 = (1 + p_other / p_ok) / p_ok
    t0 = 1 / p_ok + t1
    return t1, t0


def softmax_row(values):
    m = max(values)
    ex = [math.exp(v - m) for v in values]
    s = sum(ex)
    return [e / s for e in ex]


def presence(times, scalars, P2, bp, P1, tau, time_scale):
    """times[i][j] = list of sampled completion times; returns (p, g) as nested lists."""
    n = len(scalars)
    g = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            acc = 0.0
            for e in times[i][j]:
                u = (e / time_scale, scalars[i], scalars[j])
                for h in range(len(P1)):
                    pre = sum(P2[h][c] * u[c] for c in range(3)) + bp[h]
                    acc += P1[h] * max(pre, 0.0)
            g[i][j] = acc / len(times[i][j])
    p = [[0.0] * n for _ in range(n)]
    for i in range(n):
        others = [j for j in range(n) if j != i]
        if not others:
            continue
        row = softmax_row([g[i][j] / tau for j in others])
        for j, v in zip(others, row):
            p[i][j] = v
    return p, g


def s2v(x, p, w_in, w_msg, b, iters):
    """Synchronous sweeps of mu_i = relu(w_msg * sum_j p[j][i] mu_j + w_in x_i + b)."""
    n, d = len(x), len(w_in)
    mu = [[0.0] * d for _ in range(n)]
    for _ in range(iters):
        new = []
        for i in range(n):
            l = [sum(p[j][i] * mu[j][k] for j in range(n)) for k in range(d)]
            row = []
            for a in range(d):
                z = b[a] + sum(w_msg[a][k] * l[k] for k in range(d)) + sum(w_in[a][k] * x[i][k] for k in range(len(x[i])))
                row.append(max(z, 0.0))
            new.append(row)
        mu = new
    return mu


def q_forward(x_samples, scalars, p, W, T1, T2, two_step=True):
    """Mean over samples of E7 . sum_i gamma_i + b7.  ``x_samples[l][i]`` is the layer-1 input of node i."""
    vals = []
    for x in x_samples:
        if two_step:
            mu = s2v(x, p, W["E4"], W["E3"], W["b1"], T1)
        else:
            mu = x
        xv = [list(mu[i]) + [scalars[i]] for i in range(len(x))]
        gam = s2v(xv, p, W["E6"], W["E5"], W["b2"], T2)
        pooled = [sum(gam[i][k] for i in range(len(x))) for k in range(len(W["E7"][0]))]
        vals.append(sum(W["E7"][0][k] * pooled[k] for k in range(len(pooled))) + W["b7"][0])
    return sum(vals) / len(vals)


def greedy_matching(weights):
    """Repeatedly take the heaviest remaining edge; ties to the lowest (row, col)."""
    rows, cols = len(weights), len(weights[0]) if weights else 0
    used_r, used_c, pairs = set(), set(), []
    while True:
        best = None
        for i in range(rows):
            for j in range(cols):
                if i in used_r or j in used_c:
                    continue
                if best is None or weights[i][j] > best[0]:
                    best = (weights[i][j], i, j)
        if best is None:
            return pairs
        pairs.append((best[1], best[2]))
        used_r.add(best[1])
        used_c.add(best[2])


def max_weight_matching_value(weights) -> float:
    """Exhaustive maximum over all (not necessarily perfect) matchings."""
    rows, cols = len(weights), len(weights[0])
    best = 0.0
    k = min(rows, cols)
    for rs in itertools.permutations(range(rows), k):
        for cs in itertools.permutations(range(cols), k):
            best = max(best, sum(max(weights[r][c], 0.0) for r, c in zip(rs, cs)))
    return best


def schedule_makespan(proc, setup, initial, schedule) -> float:
    span = 0.0
    for seq in schedule:
        t, prev = 0.0, None
        for job in seq:
            t += (initial[job] if prev is None else setup[prev][job]) + proc[job]
            prev = job
        span = max(span, t)
    return span


def brute_force_makespan(proc, setup, initial, n_machines) -> float:
    """Minimum make-span over every assignment of tasks to machines and every order."""
    n = len(proc)
    best = math.inf
    for labels in itertools.product(range(n_machines), repeat=n):
        groups = [[j for j in range(n) if labels[j] == m] for m in range(n_machines)]
        per_machine = []
        for g in groups:
            per_machine.append(min(schedule_makespan(proc, setup, initial, [list(o)]) for o in itertools.permutations(g))
                               if g else 0.0)
        best = min(best, max(per_machine))
    return best


def mrrc_dp_optimum(dist, robots, tasks, ages, reward):
    """Optimal total reward by brute force over per-robot task sequences (tiny instances).

    ``dist[a][b]`` is the travel time between cells a and b; ``robots`` and
    ``tasks`` are cell ids; a robot d >= 1 away serves at age + d - 1 and a
    robot already on the cell serves at the current age.
    """
    n = len(tasks)
    best = 0.0
    for labels in itertools.product(range(len(robots) + 1), repeat=n):  # label len(robots) = never served
        groups = [[j for j in range(n) if labels[j] == r] for r in range(len(robots))]
        total = 0.0
        for r, g in enumerate(groups):
            best_seq = 0.0
            for order in itertools.permutations(g):
                t, cell, val = 0, robots[r], 0.0
                for j in order:
                    travel = max(dist[cell][tasks[j]], 1)
                    val += reward(ages[j] + t + travel - 1)
                    t += travel
                    cell = tasks[j]
                best_seq = max(best_seq, val)
            total += best_seq
        best = max(best, total)
    return best
