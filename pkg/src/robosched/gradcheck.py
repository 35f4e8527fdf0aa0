"""Central finite-difference check of the Q-network loss gradients."""
from __future__ import annotations

import numpy as np

from . import qnet
from .gridworld import MotionModel, generate_maze
from .mrrc import enumerate_matchings, initial_state, make_world

_WORLD = None


def _world():
    global _WORLD
    if _WORLD is None:
        _WORLD = make_world(generate_maze(3, 7, 7, 0.3), MotionModel.stochastic(), n_samples=20, seed=3)
    return _WORLD


def block_errors(batch, params: qnet.QNetParams, eval_seed: int = 7, h: float = 1e-5) -> dict[str, float]:
    """Norm-relative error between analytic and central-difference gradients per weight block."""
    _, grads = qnet.loss_and_gradients(batch, params, np.random.default_rng(eval_seed))
    errors = {}
    for name in params.trainable:
        arr = getattr(params, name)
        num = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            for sign in (1.0, -1.0):
                moved = arr.copy()
                moved[i] += sign * h
                loss, _ = qnet.loss_and_gradients(batch, params.with_arrays({name: moved}),
                                                  np.random.default_rng(eval_seed))
                num[i] += sign * loss / (2 * h)
        scale = max(np.linalg.norm(num), np.linalg.norm(grads[name]), 1e-8)
        errors[name] = float(np.linalg.norm(num - grads[name]) / scale)
    return errors


def gradient_check(seed: int) -> dict:
    """One random tiny instance: d=4, two sweeps per layer, two samples, at most three tasks."""
    rng = np.random.default_rng([seed, 17])
    n_tasks = int(rng.integers(2, 4))
    n_robots = int(rng.integers(1, 3))
    state = initial_state(_world(), n_robots, n_tasks, seed=seed)
    actions = enumerate_matchings(state)
    action = actions[int(rng.integers(len(actions)))]
    params = qnet.init_params(rng, d=4, T1=2, T2=2, M=2, N=2)
    # move biases and weights off their initial values so every block is exercised
    params = params.with_arrays({k: v + rng.normal(0.0, 0.3, v.shape) for k, v in params.arrays().items()})
    batch = [(state, action, float(rng.normal(1.0, 0.5)))]
    errors = block_errors(batch, params)
    worst = max(errors, key=errors.get)
    return {"seed": seed, "n_tasks": n_tasks, "max_rel_error": errors[worst], "worst_block": worst}
