"""Hand-scripted teleoperation policies.

These read privileged scene state on purpose: they exist to validate the
success detectors and to prove tasks are mechanically solvable through the
action interface, not to act as baselines.  The arm is steered by a damped
least-squares palm servo over (pan, lift, elbow) with the first wrist joint
slaved to keep the palm level, so grip offsets only ever rotate about z.
"""

from __future__ import annotations

import numpy as np

from .kinematics import forward_kinematics, quat_from_axis_angle, quat_rotate
from .scene import SceneConfig, door_hinge, handle_hub, handle_tip

Array = np.ndarray

_EPS = 1e-5
_LEVEL_SUM = np.pi  # lift + elbow + wrist1 that keeps the palm facing down

HOME_FINGERS = np.array([0.0, 0.60, 0.45, 0.30] * 4)
PINCH_FINGERS = np.array([0.0, 1.25, 1.05, 0.70] * 4)


def _arm_jacobian(model, q: Array) -> Array:
    """FD Jacobian of palm position wrt (pan, lift, elbow), wrist1 slaved."""
    cols = []
    for joint, slaved in ((0, False), (1, True), (2, True)):
        qp, qm = q.copy(), q.copy()
        qp[:, joint] += _EPS
        qm[:, joint] -= _EPS
        if slaved:
            qp[:, 3] -= _EPS
            qm[:, 3] += _EPS
        pp = forward_kinematics(model, qp).palm_pos
        pm = forward_kinematics(model, qm).palm_pos
        cols.append((pp - pm) / (2.0 * _EPS))
    return np.stack(cols, axis=-1)


def steer_arm(model, q: Array, palm_pos: Array, palm_target: Array,
              yaw: Array | None = None,
              max_step: float = 0.05, damping: float = 1e-4) -> Array:
    """Desired arm joint positions moving the palm toward palm_target.

    yaw sets the second wrist joint, spinning the hand about vertical while
    the palm stays level; position tracking absorbs the coupled motion.
    """
    err = palm_target - palm_pos
    n = np.linalg.norm(err, axis=-1, keepdims=True)
    err = err * np.minimum(1.0, max_step / np.maximum(n, 1e-9))
    jac = _arm_jacobian(model, q)
    jjt = jac @ jac.transpose(0, 2, 1) + damping * np.eye(3)
    y = np.linalg.solve(jjt, err[..., None])
    dq3 = (jac.transpose(0, 2, 1) @ y)[..., 0]
    arm = q[:, :6].copy()
    arm[:, :3] += dq3
    arm[:, 3] = _LEVEL_SUM - arm[:, 1] - arm[:, 2]
    arm[:, 4] = 0.0 if yaw is None else yaw
    arm[:, 5] = 0.0
    return arm


def _rotate_about(point: Array, center: Array, axis, angle: float) -> Array:
    q = quat_from_axis_angle(np.asarray(axis, dtype=float), angle)
    return center + quat_rotate(q, point - center)


class ScriptedPolicy:
    """Common phase bookkeeping; subclasses fill per-env targets."""

    def __init__(self, batch: int):
        self.batch = batch
        self.phase = np.zeros(batch, dtype=int)
        self.kappa = np.zeros(batch)
        self.anchor = np.zeros((batch, 3))

    def _sync_resets(self, env) -> None:
        fresh = env._t == 0
        self.phase[fresh] = 0
        self.kappa[fresh] = 0.0

    def act_env(self, env) -> Array:
        self._sync_resets(env)
        frames = env._frames
        palm_targets = np.zeros((self.batch, 3))
        fingers = np.zeros((self.batch, 16))
        yaw = np.zeros(self.batch)
        for i in range(self.batch):
            palm_targets[i], fingers[i], yaw[i] = self._plan(env, i, frames)
        arm = steer_arm(env.model, env.state.q, frames.palm_pos, palm_targets,
                        yaw=yaw)
        desired = np.concatenate([arm, fingers], axis=-1)
        delta = desired - env.state.q
        return np.clip(delta / env.model.max_action_delta, -1.0, 1.0)

    def _plan(self, env, i: int, frames):
        raise NotImplementedError


class ScriptedGrasp(ScriptedPolicy):
    """Hover over the object, descend, pinch, lift, carry to the goal."""

    HOVER = 0.06
    CLOSE_RATE = 0.08
    SQUEEZE = 0.05  # extra close beyond the attach configuration

    def __init__(self, batch: int):
        super().__init__(batch)
        self.hold = np.zeros(batch)

    def _grip(self, amount: float) -> Array:
        return HOME_FINGERS + amount * (PINCH_FINGERS - HOME_FINGERS)

    def _plan(self, env, i, frames):
        scene = env.scene
        palm = frames.palm_pos[i]
        obj = scene.obj_pos[i]
        goal = scene.goal[i]
        # pinch midpoint between thumb tip and middle fingertip
        center = 0.5 * (frames.tip_pos[i, 3] + frames.tip_pos[i, 1])
        ph = self.phase[i]
        if ph < 3 and scene.attached[i]:
            # brushed into the object and it stuck: that is a grasp, lift it
            self.phase[i] = ph = 3
            self.hold[i] = self.kappa[i]
        if ph == 0:
            target = obj + [0.0, 0.0, self.HOVER]
            if np.linalg.norm(target - center) < 0.015:
                self.phase[i] = 1
            return palm + (target - center), HOME_FINGERS, 0.0
        if ph == 1:
            if np.linalg.norm(obj - center) < 0.008:
                self.phase[i] = 2
                self.kappa[i] = 0.0
            return palm + (obj - center), HOME_FINGERS, 0.0
        if ph == 2:
            self.kappa[i] = min(self.kappa[i] + self.CLOSE_RATE, 1.2)
            if scene.attached[i]:
                self.phase[i] = 3
                self.hold[i] = min(self.kappa[i] + self.SQUEEZE, 1.3)
            elif self.kappa[i] >= 1.2:
                self.phase[i] = 0  # swept through without attaching, retry
            return palm + (obj - center), self._grip(self.kappa[i]), 0.0
        if not scene.attached[i]:
            self.phase[i] = 0
            return palm, HOME_FINGERS, 0.0
        if ph == 3:
            target = palm + [0.0, 0.0, goal[2] - obj[2]]
            if obj[2] > goal[2] - 0.02:
                self.phase[i] = 4
            return target, self._grip(self.hold[i]), 0.0
        return palm + (goal - obj), self._grip(self.hold[i]), 0.0


class ScriptedDoor(ScriptedPolicy):
    """Pinch the lever bar between thumb and middle fingertip, rotate the
    pinch point down about the hub to unlatch, then swing it about the hinge.

    A pinch grip straddles the bar tube along y, so it keeps both sensors in
    contact no matter how the bar pitches while it rotates.
    """

    # the bar tube is only 14 mm; close slowly and stop almost immediately,
    # otherwise the pinch crosses straight through it
    CLOSE_RATE = 0.03
    SQUEEZE = 0.02
    # pursuit leads: each step the target is the CURRENT grip point rotated
    # a bit further along its joint, so the radial error self-corrects and
    # the bar is dragged at a bounded angular rate
    PRESS_LEAD = 0.08
    PULL_LEAD = 0.10

    def __init__(self, batch: int):
        super().__init__(batch)
        self.hold = np.zeros(batch)

    def _grip(self, amount: float) -> Array:
        return HOME_FINGERS + amount * (PINCH_FINGERS - HOME_FINGERS)

    def _plan(self, env, i, frames):
        scene = env.scene
        palm = frames.palm_pos[i]
        hub = handle_hub(scene)[i]
        grip = hub + 0.55 * (handle_tip(scene)[i] - hub)
        center = 0.5 * (frames.tip_pos[i, 3] + frames.tip_pos[i, 1])
        tip_touch = env._bundle.touching_target[i][env._bundle.tip_mask]
        pinched = tip_touch[3] and tip_touch[:3].any()  # thumb vs a finger
        any_touch = env._bundle.touching_target[i].any()
        ph = self.phase[i]
        if ph == 0:
            target = grip + [0.0, 0.0, 0.05]
            if np.linalg.norm(target - center) < 0.015:
                self.phase[i] = 1
            return palm + (target - center), HOME_FINGERS, 0.0
        if ph == 1:
            if np.linalg.norm(grip - center) < 0.006:
                self.phase[i] = 2
                self.kappa[i] = 0.0
            return palm + (grip - center), HOME_FINGERS, 0.0
        if ph == 2:
            self.kappa[i] = min(self.kappa[i] + self.CLOSE_RATE, 1.2)
            if pinched:
                self.phase[i] = 3
                self.hold[i] = min(self.kappa[i] + self.SQUEEZE, 1.35)
            elif self.kappa[i] >= 1.2:
                self.phase[i] = 0
            return palm + (grip - center), self._grip(self.kappa[i]), 0.0
        if ph == 3:
            target = _rotate_about(grip, hub, [0.0, -1.0, 0.0], self.PRESS_LEAD)
            if scene.unlatched[i]:
                self.phase[i] = 4
            elif not any_touch:
                self.phase[i] = 0  # lost the bar, regrab at its current pose
            return palm + (target - center), self._grip(self.hold[i]), 0.0
        if not any_touch:
            self.phase[i] = 0
            return palm, HOME_FINGERS, 0.0
        hinge = door_hinge(scene)[i]
        target = _rotate_about(grip, hinge, [0.0, 0.0, 1.0], self.PULL_LEAD)
        # spin the hand with the door so the pinch stays square to the bar
        return palm + (target - center), self._grip(self.hold[i]), -scene.door_angle[i]


class ScriptedValve(ScriptedPolicy):
    """Park the middle fingertip in the rim groove and sweep it clockwise."""

    START_ANGLE = -np.pi / 2.0
    SWEEP_RATE = 0.07

    def _plan(self, env, i, frames):
        scene = env.scene
        cfg = scene.cfg
        palm = frames.palm_pos[i]
        center = scene.valve_center[i]
        tip = frames.tip_pos[i, 1]
        a = self.START_ANGLE - self.kappa[i]
        rim = center + cfg.valve_ring_radius * np.array([np.cos(a), np.sin(a), 0.0])
        if self.phase[i] == 0:
            if np.linalg.norm(rim - tip) < 0.006:
                self.phase[i] = 1
            return palm + (rim - tip), HOME_FINGERS, 0.0
        self.kappa[i] += self.SWEEP_RATE
        a = self.START_ANGLE - self.kappa[i]
        rim = center + cfg.valve_ring_radius * np.array([np.cos(a), np.sin(a), 0.0])
        return palm + (rim - tip), HOME_FINGERS, 0.0


class FrozenPolicy:
    """Null policy: zero action, robot holds the home pose."""

    def __init__(self, batch: int):
        self.batch = batch

    def act_env(self, env) -> Array:
        return np.zeros((self.batch, env.action_dim))


def scripted_policy_for(task: str, batch: int) -> ScriptedPolicy:
    return {"grasp": ScriptedGrasp, "door": ScriptedDoor,
            "valve": ScriptedValve}[task](batch)


def oracle_scene_config(task: str) -> SceneConfig:
    """Placement ranges the level-palm servo can reach for every sample.

    Grasp and valve run on the full default ranges.  The door grip point
    sits 0.22 m toward -x of the door center at a height of 0.37 m, which
    puts far-left door placements outside the arm's level-palm workspace,
    so the door oracle samples a narrower box.
    """
    if task == "door":
        return SceneConfig.for_task("door", center_x=0.10, range_x=0.12,
                                    center_y=0.57, range_y=0.05)
    return SceneConfig.for_task(task)
