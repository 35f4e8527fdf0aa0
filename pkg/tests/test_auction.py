import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robosched.auction import PartialMatching, adp_select, best_bid, count_q_evals, max_select, trace_jsonl
from robosched.ipms import epoch_step, generate_instance, initial_ipms_state
from robosched.mrrc import Matching, check_matching, enumerate_matchings, initial_state

import oracles
from conftest import world


class AdditiveQ:
    """Q(Y) = sum of edge weights in Y; counts how many matchings it scores."""

    def __init__(self, weights):
        self.w = np.asarray(weights, dtype=float)
        self.calls = 0
        self.evals = 0

    def __call__(self, matchings):
        self.calls += 1
        self.evals += len(matchings)
        return np.array([sum(self.w[r, t] for r, t in m) for m in matchings])


def test_stub_q_reproduces_greedy_matching(det_world):
    s = initial_state(det_world, 3, 4, seed=0)
    w = [[5, 1, 0, 2], [4, 9, 3, 0], [1, 1, 8, 7]]
    got = adp_select(s, AdditiveQ(w))
    assert got == Matching(oracles.greedy_matching(w))
    assert got == Matching({(1, 1), (2, 2), (0, 0)})


def test_three_by_three_eval_count(det_world):
    s = initial_state(det_world, 3, 3, seed=0)
    q = AdditiveQ(np.arange(9).reshape(3, 3))
    adp_select(s, q)
    assert q.evals == 9 + 4 + 1 == count_q_evals(s)
    assert q.calls == 3  # one batched call per round


def test_ties_go_to_lowest_robot_then_task(det_world):
    s = initial_state(det_world, 2, 2, seed=0)
    trace = []
    got = adp_select(s, AdditiveQ(np.ones((2, 2))), trace)
    assert got == Matching({(0, 0), (1, 1)})
    assert trace[0]["winner"][:2] == [0, 0]


def test_best_bid_single_robot(det_world):
    s = initial_state(det_world, 2, 3, seed=0)
    q = AdditiveQ([[1, 7, 2], [0, 0, 0]])
    bid = best_bid(0, PartialMatching(Matching()), s, q)
    assert (bid.robot, bid.task, bid.value) == (0, 1, 7.0)
    partial = PartialMatching(Matching({(1, 1)}))
    assert best_bid(0, partial, s, q).task == 2
    with pytest.raises(ValueError):
        best_bid(1, partial, s, q)


def test_trace_jsonl_rounds(det_world):
    s = initial_state(det_world, 2, 3, seed=0)
    trace = []
    adp_select(s, AdditiveQ([[1, 7, 2], [3, 6, 0]]), trace)
    lines = [json.loads(x) for x in trace_jsonl(trace).splitlines()]
    assert [x["round"] for x in lines] == [0, 1]
    assert lines[0]["bids"] == [[0, 1, 7.0], [1, 1, 6.0]]
    assert lines[0]["winner"] == [0, 1, 7.0]
    assert lines[1]["winner"] == [1, 0, 10.0]  # Q of the whole partial matching


def test_no_free_robot_or_task_returns_forced_pairs():
    inst = generate_instance(0, 2, 2)
    s = initial_ipms_state(inst)
    s, _, _ = epoch_step(s, {(0, 0), (1, 1)})
    # one machine finished, the other is processing its only remaining task
    assert adp_select(s, AdditiveQ(np.ones((2, 2)))) == s.forced_pairs


def test_forced_pairs_kept_in_ipms_auction():
    inst = generate_instance(3, 2, 5)
    s, _, _ = epoch_step(initial_ipms_state(inst), {(0, 0), (1, 1)})
    forced = s.forced_pairs
    assert forced
    q = AdditiveQ(np.random.default_rng(0).random((2, 5)))
    got = adp_select(s, q)
    assert forced <= got
    check_matching(s, got)
    assert q.evals == count_q_evals(s)


def test_max_select_is_exhaustive_argmax(det_world):
    s = initial_state(det_world, 2, 4, seed=1)
    w = np.random.default_rng(2).random((2, 4))
    got = max_select(s, AdditiveQ(w))
    best = max(sum(w[r, t] for r, t in a) for a in enumerate_matchings(s))
    assert sum(w[r, t] for r, t in got) == pytest.approx(best)


def _weights(data, n_r, n_t):
    flat = data.draw(st.lists(st.floats(0, 10, allow_nan=False), min_size=n_r * n_t, max_size=n_r * n_t))
    return np.array(flat).reshape(n_r, n_t)


@settings(max_examples=150, deadline=None)
@given(st.data(), st.integers(1, 4), st.integers(1, 4), st.integers(0, 1000))
def test_auction_half_of_max_weight_matching(data, n_r, n_t, seed):
    w = _weights(data, n_r, n_t)
    s = initial_state(world("det"), n_r, n_t, seed=seed)
    q = AdditiveQ(w)
    got = adp_select(s, q)
    check_matching(s, got)
    value = sum(w[r, t] for r, t in got)
    assert value >= 0.5 * oracles.max_weight_matching_value(w.tolist()) - 1e-9
    assert q.evals == count_q_evals(s)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 7))
def test_auction_output_maximal_for_any_q(seed, n_r, n_t):
    s = initial_state(world("stoch"), n_r, n_t, seed=seed)
    rng = np.random.default_rng(seed)
    got = adp_select(s, lambda ms: rng.normal(size=len(ms)))
    assert len(got) == min(n_r, n_t)
    check_matching(s, got)


def test_count_formula():
    class S:
        free_robots = tuple(range(4))
        open_tasks = tuple(range(6))
        forced_pairs = Matching()
    assert count_q_evals(S) == 24 + 15 + 8 + 3
