"""The central property of the observation design: the policy cannot see
where the object is. Two worlds that differ only in object placement feed
the policy identical observations until a fingertip actually touches
something; only the critic's privileged block differs from step one.

Run:  python3 demos/03_blind_observations.py
"""

import numpy as np

from blindtouch.env import EnvConfig, TouchEnv
from blindtouch.scripted import ScriptedGrasp

# same seed -> same robot state; then move one world's object by hand
a = TouchEnv(EnvConfig(task="grasp", batch=1, seed=3, t_max=300))
b = TouchEnv(EnvConfig(task="grasp", batch=1, seed=3, t_max=300))
obs_a, _ = a.reset(3)
obs_b, _ = b.reset(3)
b.scene.obj_pos[0, 0] += 0.05   # 5 cm sideways, policy must not notice

print("policy obs identical at reset:", np.array_equal(obs_a, obs_b))

policy = ScriptedGrasp(batch=1)   # chases world a's object
priv_diverged_at = None
for t in range(300):
    act = policy.act_env(a)
    ra, rb = a.step(act), b.step(act)
    if priv_diverged_at is None and not np.array_equal(
            ra.privileged_obs, rb.privileged_obs):
        priv_diverged_at = t   # the critic sees the displacement immediately
    same = np.array_equal(ra.policy_obs, rb.policy_obs)
    touch_a = ra.policy_obs[0, a.obs_slices["contacts"]].any()
    touch_b = rb.policy_obs[0, b.obs_slices["contacts"]].any()
    if not same or touch_a or touch_b:
        print(f"step {t}: policy obs "
              f"{'diverged' if not same else 'still equal'}"
              f"  touch a={bool(touch_a)} b={bool(touch_b)}")
        break
    if ra.done[0]:
        break
print(f"privileged obs diverged at step {priv_diverged_at}; the policy view "
      f"stayed identical for {t} steps and split only through touch")
