import numpy as np
import pytest

from robosched import qnet, trainer
from robosched.mrrc import MRRCEnv, ProblemState, enumerate_matchings, initial_state
from robosched.trainer import (Optimizer, ReplayBuffer, TrainConfig, Transition, bellman_target, evaluate, fit_step,
                               rollout, train)

from conftest import world


def _params(seed=0, d=4):
    return qnet.init_params(np.random.default_rng(seed), d=d, T1=2, T2=2, M=2, N=2)


def _adjacent_state(w, age):
    r = w.routing
    a, b = next((a, b) for a in range(r.n_cells) for b in range(r.n_cells) if r.dist[a, b] == 1)
    return ProblemState(w, (a,), (b,), (age,), (True,), (-1,))


def test_zero_episodes_returns_init(det_world):
    p = _params()
    res = train(TrainConfig(episodes=0), MRRCEnv(det_world, 1, 2), p)
    assert res.params is p and res.log == []


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=0)
    with pytest.raises(ValueError):
        TrainConfig(select="softmax")
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    cfg = TrainConfig(episodes=100, explore_fraction=0.5, explore_start=1.0, explore_end=0.0)
    assert cfg.explore_prob(0) == 1.0 and cfg.explore_prob(25) == 0.5 and cfg.explore_prob(80) == 0.0


def test_terminal_target_is_scaled_reward(det_world):
    s = _adjacent_state(det_world, 50)
    env = MRRCEnv(det_world, 1, 1)
    nxt, r = env.step(s, {(0, 0)})
    t = Transition(s, frozenset({(0, 0)}), r, nxt, True)
    assert r == 150
    assert bellman_target(t, _params(), 0.99, np.random.default_rng(0), 100.0) == 1.5


def test_gamma_zero_ignores_next_state(det_world):
    s = initial_state(det_world, 1, 3, seed=0)
    nxt, _ = MRRCEnv(det_world, 1, 3).step(s, {(0, 0)})
    t = Transition(s, frozenset({(0, 0)}), 40.0, nxt, False)
    assert bellman_target(t, _params(), 0.0, np.random.default_rng(0), 100.0) == 0.4


def test_nonterminal_target_uses_auction_value(det_world):
    s = initial_state(det_world, 1, 2, seed=3)
    env = MRRCEnv(det_world, 1, 2)
    nxt, r = env.step(s, {(0, 0)})
    p = _params(2)
    t = Transition(s, frozenset({(0, 0)}), r, nxt, False)
    # 1 robot, 2 tasks: the auction equals the max over the two actions
    qs = [qnet.q_value(nxt, a, p).value for a in enumerate_matchings(nxt)]
    assert bellman_target(t, p, 0.9, np.random.default_rng(0), 100.0) == pytest.approx(r / 100 + 0.9 * max(qs))


def test_exhausted_target_has_no_bootstrap(det_world):
    s = initial_state(det_world, 1, 3, seed=0)
    t = Transition(s, frozenset({(0, 0)}), 0.0, s, False, exhausted=True)
    assert bellman_target(t, _params(), 0.99, np.random.default_rng(0), 100.0) == 0.0


def test_replay_fifo_eviction():
    buf = ReplayBuffer(3)
    buf.extend(range(5))
    assert list(buf.items) == [2, 3, 4]
    assert sorted(buf.sample(10, np.random.default_rng(0))) == [2, 3, 4]


def test_zero_sigma_exploration_matches_greedy(det_world):
    env = MRRCEnv(det_world, 2, 4)
    s = env.initial(1)
    p = _params(1)
    a, ra = rollout(env, s, p, True, 0.0, np.random.default_rng(0))
    b, rb = rollout(env, s, p, False, 0.0, np.random.default_rng(0))
    assert ra == rb and [t.action for t in a] == [t.action for t in b]


def test_fit_step_does_not_mutate_params_or_target(det_world):
    env = MRRCEnv(det_world, 1, 3)
    p = _params(3)
    target = _params(4)
    snap = {k: v.copy() for k, v in p.arrays().items()}
    tsnap = {k: v.copy() for k, v in target.arrays().items()}
    trans, _ = rollout(env, env.initial(2), p, False, 0.0, np.random.default_rng(0))
    cfg = TrainConfig(lr=0.01)
    new, _ = fit_step(trans[:4], p, Optimizer(cfg), cfg, np.random.default_rng(1), 100.0, target)
    for k, v in p.arrays().items():
        assert np.array_equal(v, snap[k])
        assert np.array_equal(getattr(target, k), tsnap[k])
    assert any(not np.array_equal(getattr(new, k), snap[k]) for k in p.trainable)


def test_single_sample_regression_converges(stoch_world):
    s = initial_state(stoch_world, 1, 2, seed=1)
    a = frozenset({(0, 1)})
    t = Transition(s, a, 120.0, s, True)
    cfg = TrainConfig(lr=3e-3, optimizer="adam")
    opt = Optimizer(cfg)
    p = _params(5)
    for _ in range(600):
        p, loss = fit_step([t], p, opt, cfg, np.random.default_rng(0), 100.0)
    assert qnet.q_value(s, a, p, np.random.default_rng(0)).value == pytest.approx(1.2, abs=1e-3)


def test_sgd_step_matches_manual_update(det_world):
    s = initial_state(det_world, 1, 2, seed=1)
    t = Transition(s, frozenset({(0, 0)}), 50.0, s, True)
    cfg = TrainConfig(lr=0.01, clip_norm=1e9, optimizer="sgd")
    p = _params(6)
    _, grads = qnet.loss_and_gradients([(s, t.action, 0.5)], p, np.random.default_rng(0))
    new, _ = fit_step([t], p, Optimizer(cfg), cfg, np.random.default_rng(0), 100.0)
    for k in p.trainable:
        assert np.allclose(getattr(new, k), getattr(p, k) - 0.01 * grads[k], atol=1e-15)


def test_gradient_clipping_limits_step(det_world):
    s = initial_state(det_world, 1, 2, seed=1)
    t = Transition(s, frozenset({(0, 0)}), 1e6, s, True)
    cfg = TrainConfig(lr=1.0, clip_norm=0.5, optimizer="sgd")
    p = _params(6)
    new, _ = fit_step([t], p, Optimizer(cfg), cfg, np.random.default_rng(0), 1.0)
    step = np.sqrt(sum(np.sum((getattr(new, k) - getattr(p, k)) ** 2) for k in p.trainable))
    assert step == pytest.approx(0.5, rel=1e-9)


def test_training_is_deterministic(det_world):
    env = MRRCEnv(det_world, 2, 3)
    states = [env.initial(100 + k) for k in range(3)]
    cfg = TrainConfig(episodes=12, eval_every=4, batch_size=8, seed=3, lr=1e-3)
    a = train(cfg, env, _params(), states)
    b = train(cfg, env, _params(), states)
    assert a.log == b.log
    for k, v in a.params.arrays().items():
        assert np.array_equal(v, getattr(b.params, k))
    assert [r["episode"] for r in a.log] == [4, 8, 12]


def test_small_training_improves_on_tiny_problem():
    w = world("det", size=7)
    env = MRRCEnv(w, 1, 2)
    states = [env.initial(500 + k) for k in range(10)]
    cfg = TrainConfig(episodes=150, eval_every=150, batch_size=16, optimizer="adam", lr=3e-3,
                      updates_per_episode=2, explore_sigma=1.0, target_sync=50)
    init = np.mean(evaluate(env, states, _params(8), 0))
    res = train(cfg, env, _params(8), states)
    assert res.log[-1]["eval_mean_return"] >= init


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_last_params(det_world):
    env = MRRCEnv(det_world, 1, 2)
    cfg = TrainConfig(episodes=3, batch_size=2, lr=1e308, clip_norm=1e308, optimizer="sgd")
    with pytest.raises(trainer.DivergenceError) as info:
        train(cfg, env, _params())
    assert info.value.params is not None
