"""Run the hand-scripted controllers on all three tasks and report the
terminal cause of each episode. These controllers read privileged scene
state on purpose: they exist to prove the success detectors fire and the
tasks are solvable through the same action interface the policy uses.

Run:  python3 demos/02_scripted_oracles.py
"""

import numpy as np

from blindtouch.env import CAUSE_NAMES, EnvConfig, TouchEnv
from blindtouch.scripted import oracle_scene_config, scripted_policy_for

BATCH = 4

for task in ("grasp", "door", "valve"):
    env = TouchEnv(EnvConfig(task=task, batch=BATCH, seed=11, t_max=300,
                             scene=oracle_scene_config(task)))
    policy = scripted_policy_for(task, BATCH)
    env.reset(11)
    causes = np.zeros(BATCH, dtype=int)
    lengths = np.zeros(BATCH, dtype=int)
    for t in range(300):
        res = env.step(policy.act_env(env))
        fresh = res.done & (causes == 0)
        causes[fresh] = res.status.cause[fresh]
        lengths[fresh] = t + 1
        if (causes != 0).all():
            break
    names = [CAUSE_NAMES[int(c)] for c in causes]
    print(f"{task:6s}  causes={names}  episode lengths={lengths.tolist()}")
