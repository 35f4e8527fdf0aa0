"""Auction-fitted Q-iteration with parameter-space exploration.

Each episode is played by the auction policy of either the current
parameters or, with the current exploration probability, a noisy copy of
them kept for the whole episode.  Transitions go to a FIFO replay buffer;
after every episode a uniform batch is refit toward
``r / scale + gamma * Q(s', auction(s'))``.  The bootstrap term uses a
copy of the parameters refreshed every ``target_sync`` gradient steps;
``target_sync=0`` bootstraps from the current parameters instead.
"""
from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import qnet
from .auction import adp_select, max_select
from .mrrc import is_exhausted, is_terminal

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, message, params):
        super().__init__(message)
        self.params = params


@dataclass(frozen=True, eq=False)
class Transition:
    state: object
    action: frozenset
    reward: float
    next_state: object
    terminal: bool
    exhausted: bool = False  # no reward left to collect after next_state


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 1000
    gamma: float = 0.99
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"  # or "sgd"
    clip_norm: float = 10.0
    updates_per_episode: int = 4
    target_sync: int = 200  # gradient steps between target refreshes, 0 = no target copy
    replay_capacity: int = 200_000
    explore_sigma: float = 1.0  # noise std as a multiple of each matrix's RMS
    explore_start: float = 1.0
    explore_end: float = 0.05
    explore_fraction: float = 0.3
    eval_every: int = 100
    select: str = "auction"  # or "max"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.episodes < 0 or self.batch_size < 1 or self.replay_capacity < 1:
            raise ValueError("episodes, batch size and replay capacity must be positive")
        if self.select not in ("auction", "max"):
            raise ValueError(f"unknown action selection {self.select!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def explore_prob(self, episode: int) -> float:
        span = self.explore_fraction * self.episodes
        if span <= 0:
            return self.explore_end
        frac = min(episode / span, 1.0)
        return self.explore_start + frac * (self.explore_end - self.explore_start)


class ReplayBuffer:
    """Fixed-capacity FIFO store with uniform sampling."""

    def __init__(self, capacity: int):
        self.items = deque(maxlen=capacity)

    def __len__(self):
        return len(self.items)

    def extend(self, transitions):
        self.items.extend(transitions)

    def sample(self, k: int, rng: np.random.Generator) -> list:
        idx = rng.choice(len(self.items), size=min(k, len(self.items)), replace=False)
        return [self.items[i] for i in idx]


def select_action(state, params: qnet.QNetParams, rng, select: str = "auction", trace=None):
    ev = qnet.QEvaluator(params, state, rng)
    if select == "max":
        return max_select(state, ev.evaluate), ev
    return adp_select(state, ev.evaluate, trace), ev


def greedy_policy(params: qnet.QNetParams, rng, select: str = "auction"):
    def policy(state):
        return select_action(state, params, rng, select)[0]
    return policy


def rollout(env, state, params: qnet.QNetParams, explore: bool, sigma: float, rng: np.random.Generator,
            select: str = "auction"):
    """Play one episode; returns ``(transitions, total_reward)`` with unscaled rewards.

    With ``explore`` the whole episode uses one perturbed copy of ``params``.
    Episodes hitting the step cap end with a non-terminal last transition.
    An episode also stops once no reward is left to collect; its last
    transition is flagged ``exhausted`` and bootstraps from a value of zero.
    """
    acting = qnet.perturb(params, sigma, rng) if explore else params
    cap = env.step_cap(state)
    transitions, total = [], 0.0
    while not is_terminal(state) and not is_exhausted(state) and len(transitions) < cap:
        action, _ = select_action(state, acting, rng, select)
        nxt, r = env.step(state, action, rng)
        transitions.append(Transition(state, action, r, nxt, is_terminal(nxt), is_exhausted(nxt)))
        total += r
        state = nxt
    if not is_terminal(state) and not is_exhausted(state):
        log.warning("episode truncated after %d steps", cap)
    return transitions, total


def bellman_target(t: Transition, params: qnet.QNetParams, gamma: float, rng,
                   reward_scale: float = 1.0, select: str = "auction") -> float:
    r = t.reward / reward_scale
    if t.terminal or t.exhausted or gamma == 0:
        return r
    action, ev = select_action(t.next_state, params, rng, select)
    return r + gamma * float(ev.evaluate([action])[0])


class Optimizer:
    def __init__(self, config: TrainConfig):
        self.config = config
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: qnet.QNetParams, grads: dict) -> qnet.QNetParams:
        cfg = self.config
        names = params.trainable
        norm = float(np.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in names)))
        scale = min(1.0, cfg.clip_norm / norm) if norm > 0 else 1.0
        new = {}
        if cfg.optimizer == "sgd":
            for n in names:
                new[n] = getattr(params, n) - cfg.lr * scale * grads[n]
        else:
            self.t += 1
            b1, b2, eps = 0.9, 0.999, 1e-8
            for n in names:
                g = scale * grads[n]
                self.m[n] = b1 * self.m.get(n, 0.0) + (1 - b1) * g
                self.v[n] = b2 * self.v.get(n, 0.0) + (1 - b2) * g * g
                mhat = self.m[n] / (1 - b1 ** self.t)
                vhat = self.v[n] / (1 - b2 ** self.t)
                new[n] = getattr(params, n) - cfg.lr * mhat / (np.sqrt(vhat) + eps)
        return params.with_arrays(new)


def fit_step(batch, params, optimizer: Optimizer, config: TrainConfig, rng, reward_scale: float,
             target_params=None):
    """One gradient step toward Bellman targets; targets never touch ``params``."""
    source = params if target_params is None else target_params
    targets = [bellman_target(t, source, config.gamma, rng, reward_scale, config.select) for t in batch]
    loss, grads = qnet.loss_and_gradients(
        [(t.state, t.action, y) for t, y in zip(batch, targets)], params, rng)
    return optimizer.step(params, grads), loss


def evaluate(env, states, params, rng_seed: int, select: str = "auction") -> list[float]:
    """Returns of the greedy policy (no exploration) on fixed initial states."""
    out = []
    for k, s in enumerate(states):
        rng = np.random.default_rng([rng_seed, k])
        _, total = rollout(env, s, params, False, 0.0, rng, select)
        out.append(total)
    return out


@dataclass
class TrainResult:
    params: qnet.QNetParams
    log: list[dict] = field(default_factory=list)
    best_params: qnet.QNetParams | None = None


LOG_FIELDS = ["episode", "wall_ms", "loss", "eval_mean_return", "eval_pct_optimal", "eval_pct_sga",
              "explore_prob"]


def train(config: TrainConfig, env, params: qnet.QNetParams, eval_states=(), eval_optimal=None,
          eval_sga=None, record_wall_time: bool = False, checkpoint=None) -> TrainResult:
    """Auction-fitted Q-iteration.

    ``eval_states`` are played greedily every ``config.eval_every`` episodes;
    ``eval_optimal`` and ``eval_sga`` (per-state returns) turn the mean
    return into percentages.  ``best_params`` tracks the best evaluation.
    ``checkpoint(params, episode)`` is called after each evaluation.
    """
    result = TrainResult(params)
    if config.episodes == 0:
        return result
    replay = ReplayBuffer(config.replay_capacity)
    optimizer = Optimizer(config)
    scale = getattr(env, "reward_scale", 1.0)
    t0 = time.perf_counter()
    best = -np.inf
    loss = float("nan")
    recent = deque(maxlen=config.eval_every)
    n_updates, target = 0, None
    for ep in range(config.episodes):
        rng = np.random.default_rng([config.seed, ep])
        p_explore = config.explore_prob(ep)
        explore = bool(rng.random() < p_explore)
        state = env.initial(int(rng.integers(2**31)))
        try:
            transitions, ret = rollout(env, state, params, explore, config.explore_sigma, rng, config.select)
            recent.append(ret)
            replay.extend(transitions)
            for _ in range(config.updates_per_episode):
                if config.target_sync and n_updates % config.target_sync == 0:
                    target = params
                n_updates += 1
                batch = replay.sample(config.batch_size, rng)
                params, loss = fit_step(batch, params, optimizer, config, rng, scale, target)
        except FloatingPointError as exc:
            if checkpoint is not None:
                checkpoint(params, ep)
            raise DivergenceError(f"divergence at episode {ep}: {exc}", params) from exc
        last = ep == config.episodes - 1
        if eval_states and ((ep + 1) % config.eval_every == 0 or last):
            returns = evaluate(env, eval_states, params, config.seed + 7919, config.select)
            mean = float(np.mean(returns))
            row = {"episode": ep + 1, "loss": loss, "eval_mean_return": mean,
                   "eval_pct_optimal": _pct(returns, eval_optimal), "eval_pct_sga": _pct(returns, eval_sga),
                   "explore_prob": p_explore}
            row["wall_ms"] = round((time.perf_counter() - t0) * 1000) if record_wall_time else ""
            result.log.append(row)
            if mean > best:
                best, result.best_params = mean, params
            if checkpoint is not None:
                checkpoint(params, ep + 1)
            log.info("episode %d loss %.4g eval %.2f train %.2f replay %d", ep + 1, loss, mean,
                     float(np.mean(recent)), len(replay))
    result.params = params
    return result


def _pct(returns, reference):
    if reference is None or float(np.sum(reference)) == 0:
        return ""
    return 100.0 * float(np.sum(returns)) / float(np.sum(reference))
