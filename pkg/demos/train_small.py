"""Train a small policy for 2 robots / 4 tasks and compare it with the greedy baseline.

Takes about a minute on one core.  300 episodes is a short budget: the policy can trail the
greedy baseline, and the printed rollout may show two robots swapping targets every step, the
oscillation that per-step re-matching allows.  The acceptance runs use 1,000 episodes.

Run:  python demos/train_small.py
"""
import logging

import numpy as np

from robosched import experiments as ex
from robosched.mrrc import is_exhausted
from robosched.trainer import greedy_policy

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = ex.with_overrides(ex.ExperimentConfig(), sizes=((2, 4),), train={"episodes": 300, "eval_every": 50},
                        eval={"instances": 20, "validation": 10})
run = ex.train_run(cfg, seed=0)
for row in run.log:
    print(f"episode {row['episode']:4d}  validation return {row['eval_mean_return']:8.2f}  "
          f"pct optimal {row['eval_pct_optimal']:6.2f}")

env = ex.make_env(cfg)
states = ex.eval_states(cfg, env)
trained = ex.policy_returns(env, states, run.params)
sga, optimal = ex.reference_returns(cfg, env, states)
print(f"held-out mean: trained {np.mean(trained):.1f}, greedy {np.mean(sga):.1f}, optimal {np.mean(optimal):.1f}")

# one greedy rollout, step by step
s = states[0]
policy = greedy_policy(run.params, np.random.default_rng(0))
# stops once every task is served or no open task can still pay out
total = 0.0
while any(s.alive) and not is_exhausted(s):
    action = policy(s)
    s, r = env.step(s, action)
    total += r
    if s.clock <= 25:
        print(f"t={s.clock:3d} action={sorted(action)} reward={r:.0f} ages={[s.ages[t] for t in s.task_ids]}")
print(f"episode ends at t={s.clock} with return {total:.0f}, {sum(s.alive)} task(s) left unserved")
