"""Exact optimum, sequential greedy and random play on small reward-collection instances.

Run:  python demos/oracle_vs_sga.py
"""
import numpy as np

from robosched import experiments as ex
from robosched.baselines import exact_optimal, plan_policy, random_policy, sga_policy
from robosched.mrrc import run_episode

cfg = ex.ExperimentConfig()
env = ex.make_env(cfg, (2, 6))
rng = np.random.default_rng(0)

print("seed   optimal   greedy   random   oracle nodes")
for seed in range(8):
    s = env.initial(seed)
    best = exact_optimal(s)
    greedy = run_episode(env, s, sga_policy)[0]
    rand = run_episode(env, s, random_policy(rng))[0]
    follow = run_episode(env, s, plan_policy(best.plan))[0]
    assert follow == best.value  # the recovered plan achieves the optimum
    print(f"{seed:4d} {best.value:9.0f} {greedy:8.0f} {rand:8.0f} {best.nodes:10d}")
    print(f"       plan per robot: {best.plan}")
