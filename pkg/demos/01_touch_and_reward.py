"""Step a grasp episode with the scripted controller and watch what the
policy would see: 16 touch bits flipping as the fingers meet the can, and the
reward decomposition paying its one-shot bonuses.

Run:  python3 demos/01_touch_and_reward.py
"""

import numpy as np

from blindtouch.env import CAUSE_NAMES, EnvConfig, TouchEnv
from blindtouch.rewards import BONUS_PICKED
from blindtouch.scene import OBJECT_NAMES
from blindtouch.scripted import ScriptedGrasp

env = TouchEnv(EnvConfig(task="grasp", batch=1, seed=7, t_max=200,
                         auto_reset=False))
policy = ScriptedGrasp(batch=1)
sl = env.obs_slices

pobs, _ = env.reset(7)
print(f"object: {OBJECT_NAMES[env.scene.obj_index[0]]} "
      f"at {np.round(env.scene.obj_pos[0], 3)}")
print(f"policy obs is {pobs.shape[1]}-D; touch bits live at {sl['contacts']}")
print()
print("step  touch bits         r      note")

last_bits = None
for t in range(200):
    res = env.step(policy.act_env(env))
    bits = res.policy_obs[0, sl["contacts"]].astype(int)
    note = ""
    if last_bits is None or not np.array_equal(bits, last_bits):
        note = "touch changed"
        last_bits = bits.copy()
    if res.breakdown.bonus_mask[0] & BONUS_PICKED:
        note = "picked bonus paid"
    if note:
        print(f"{t:4d}  {''.join(map(str, bits))}  {res.reward[0]:7.2f}  {note}")
    if res.done[0]:
        print(f"{t:4d}  episode over: {CAUSE_NAMES[int(res.status.cause[0])]}, "
              f"object z={env.scene.obj_pos[0, 2]:.3f}")
        break
