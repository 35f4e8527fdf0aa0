"""Schedule 3 machines / 12 jobs with local search and with an untrained auction policy.

Run:  python demos/ipms_schedule.py
"""
import numpy as np

from robosched import experiments as ex
from robosched.baselines import ipms_local_search
from robosched.ipms import gantt_csv, generate_instance, lower_bounds, run_policy
from robosched.trainer import greedy_policy

inst = generate_instance(seed=1, n_machines=3, n_tasks=12)
print("lower bounds (longest job, mean load):", [round(b, 1) for b in lower_bounds(inst)])

history = []
schedule, span = ipms_local_search(inst, restarts=10, seed=0, history=history)
print(f"local search make-span {span:.1f}; best after each restart {[round(h, 1) for h in history]}")
for m, seq in enumerate(schedule):
    print(f"  machine {m}: {seq}")

cfg = ex.with_overrides(ex.ExperimentConfig(), problem="ipms", sizes=((3, 12),))
params = ex.init_model(cfg, seed=0)
q_span, rows = run_policy(inst, greedy_policy(params, np.random.default_rng(0)))
print(f"untrained Q-network make-span {q_span:.1f}")
print(gantt_csv(rows))
