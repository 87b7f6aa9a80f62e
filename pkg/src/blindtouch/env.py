"""Vectorized MDP: observation assembly, action repeat, termination, auto-reset.

The policy observation is deliberately blind: joint state, binary touch bits,
palm pose/velocity, palm-relative fingertip positions, and static task info
(goal location and randomization ranges).  Object placement never appears.
The critic additionally sees a privileged block (target pose and velocity,
distances, physical parameters, indicators, raw force magnitudes).

All arrays carry a leading batch axis and every per-env computation is
elementwise, so a batch of N steps bit-identically to N separate envs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UsageError
from .kinematics import (
    CONTROL_DT,
    N_SUB_ITER,
    N_SUBSTEPS,
    SIM_DT,
    JointChainModel,
    action_to_targets,
    angvel_from_quats,
    default_robot_model,
    forward_kinematics,
    home_state,
    pd_position_step,
)
from .rewards import (
    ProgressTracker,
    RewardBreakdown,
    RewardWeights,
    StepQuantities,
    total_reward,
)
from .scene import (
    SceneConfig,
    detect_contacts,
    goal_distance,
    object_height,
    physical_params,
    reset_rows,
    sample_initial,
    step_scene,
    target_distances,
    target_pose,
    task_success,
)
from .tactile import (
    DEFAULT_THRESHOLD,
    MASK_PRESETS,
    N_SENSORS,
    SensorLayout,
    apply_sensor_mask,
    binarize,
    wrist_ft_reading,
)

Array = np.ndarray

CAUSE_NONE = 0
CAUSE_SUCCESS = 1
CAUSE_TIMEOUT = 2
CAUSE_FAULT = 3
CAUSE_NAMES = {CAUSE_NONE: "none", CAUSE_SUCCESS: "success",
               CAUSE_TIMEOUT: "timeout", CAUSE_FAULT: "fault"}

# privileged block: pose 7 + velocity 6 + tip distances 4 + params 4
# + indicators 2 + raw force magnitudes 16
PRIVILEGED_DIM = 39


@dataclass(frozen=True)
class EnvConfig:
    task: str = "grasp"
    batch: int = 1
    seed: int = 0
    t_max: int = 300
    sensor_preset: str = "All"
    threshold: float = DEFAULT_THRESHOLD
    da_sensor: bool = False   # zero the touch bits at observation time only
    wo_pinfo: bool = False    # zero the privileged block
    ft_sensor: bool = False   # replace touch bits with a 6-axis wrist reading
    auto_reset: bool = True
    weights: RewardWeights = field(default_factory=RewardWeights)
    scene: SceneConfig | None = None

    def __post_init__(self):
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if self.sensor_preset not in MASK_PRESETS:
            raise ConfigError(f"unknown sensor preset {self.sensor_preset!r}")
        if self.scene is not None and self.scene.task != self.task:
            raise ConfigError("scene config task does not match env task")


@dataclass
class EpisodeStatus:
    t: Array           # (B,) steps taken in the current episode
    terminated: Array  # (B,) bool, episode ended on this step
    cause: Array       # (B,) int, CAUSE_* code (CAUSE_NONE while running)


@dataclass
class StepResult:
    policy_obs: Array
    privileged_obs: Array
    reward: Array
    done: Array
    status: EpisodeStatus
    breakdown: RewardBreakdown


class TouchEnv:
    """Batched quasi-static manipulation environment."""

    def __init__(self, config: EnvConfig, model: JointChainModel | None = None):
        self.config = config
        self.model = model if model is not None else default_robot_model()
        base = SensorLayout.from_model(self.model, threshold=config.threshold)
        self.layout = apply_sensor_mask(base, config.sensor_preset)
        self.scene_cfg = (config.scene if config.scene is not None
                          else SceneConfig.for_task(config.task))
        self.task = config.task
        self.batch = config.batch
        self._task_info = self._build_task_info()
        self._slices = self._build_slices()
        self.policy_dim = self._slices["task_info"].stop
        self.privileged_dim = self.policy_dim + PRIVILEGED_DIM
        self.rngs: list[np.random.Generator] = []
        self.reset(config.seed)

    # -- observation layout ------------------------------------------------

    def _build_slices(self) -> dict[str, slice]:
        nj = self.model.n_joints
        touch = 6 if self.config.ft_sensor else N_SENSORS
        info = 5 if self.task == "grasp" else 2
        names = [("q", nj), ("qdot", nj), ("contacts", touch),
                 ("palm", 13), ("tips", 12), ("task_info", info)]
        out, k = {}, 0
        for name, width in names:
            out[name] = slice(k, k + width)
            k += width
        return out

    @property
    def obs_slices(self) -> dict[str, slice]:
        return dict(self._slices)

    @property
    def action_dim(self) -> int:
        return self.model.n_joints

    def _build_task_info(self) -> Array:
        cfg = self.scene_cfg
        if self.task == "grasp":
            row = [cfg.goal_x, cfg.goal_y, cfg.goal_z, cfg.range_x, cfg.range_y]
        else:
            row = [cfg.range_x, cfg.range_y]
        return np.broadcast_to(np.array(row), (self.batch, len(row))).copy()

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed: int | Array | None = None) -> tuple[Array, Array]:
        b = self.batch
        if seed is not None:
            seeds = np.broadcast_to(np.asarray(seed), (b,)) + (
                np.arange(b) if np.ndim(seed) == 0 else 0)
            self.rngs = [np.random.default_rng(int(s)) for s in seeds]
        elif not self.rngs:
            raise UsageError("first reset needs a seed")
        self.scene = sample_initial(self.scene_cfg, self.rngs)
        self.state = home_state(self.model, batch=(b,))
        self._frames = forward_kinematics(self.model, self.state.q)
        self._bundle = detect_contacts(self._frames.sensor_pos, self.scene, self.layout)
        self._t = np.zeros(b, dtype=np.int64)
        self._terminated = np.zeros(b, dtype=bool)
        d = target_distances(self.scene, self._frames.tip_pos)
        self.tracker = ProgressTracker.init(d, goal_distance(self.scene))
        self._prev_palm_pos = self._frames.palm_pos.copy()
        self._prev_palm_quat = self._frames.palm_quat.copy()
        self._prev_target = target_pose(self.scene)
        self._palm_vel = np.zeros((b, 6))
        self._target_vel = np.zeros((b, 6))
        return self._observe()

    def step(self, action: Array) -> StepResult:
        cfg = self.config
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.batch, self.model.n_joints):
            raise UsageError(
                f"action shape {action.shape}, expected {(self.batch, self.model.n_joints)}")
        if not cfg.auto_reset and self._terminated.any():
            raise UsageError("stepping a terminated env without auto_reset")

        targets = action_to_targets(action, self.state, self.model)
        frames, bundle = self._frames, self._bundle
        frac = 1.0 / N_SUB_ITER
        for _ in range(N_SUB_ITER):
            palm_before = (frames.palm_pos, frames.palm_quat)
            for _ in range(N_SUBSTEPS):
                self.state = pd_position_step(self.state, targets, self.model, SIM_DT)
            frames = forward_kinematics(self.model, self.state.q)
            self.scene = step_scene(
                self.scene, palm_before, (frames.palm_pos, frames.palm_quat),
                bundle, frames.sensor_pos, cap_fraction=frac)
            bundle = detect_contacts(frames.sensor_pos, self.scene, self.layout)
        self._frames, self._bundle = frames, bundle
        self._t += 1

        reward, self.tracker, breakdown = total_reward(
            self.task, self.tracker, self._quantities(), cfg.weights)

        success = task_success(self.scene)
        fault = ~(np.isfinite(self.state.q).all(axis=1)
                  & np.isfinite(self.state.qdot).all(axis=1))
        if self.task == "grasp":
            fault |= self.scene.obj_pos[:, 2] < -0.5
        timeout = self._t >= cfg.t_max
        cause = np.zeros(self.batch, dtype=np.int64)
        cause = np.where(timeout, CAUSE_TIMEOUT, cause)
        cause = np.where(fault, CAUSE_FAULT, cause)
        cause = np.where(success, CAUSE_SUCCESS, cause)
        done = cause != CAUSE_NONE
        status = EpisodeStatus(self._t.copy(), done.copy(), cause)
        self._terminated = done.copy()

        self._update_velocities()
        if cfg.auto_reset and done.any():
            self._reset_members(done)
        pobs, vobs = self._observe()
        return StepResult(pobs, vobs, reward, done, status, breakdown)

    def _quantities(self) -> StepQuantities:
        scene = self.scene
        d = target_distances(scene, self._frames.tip_pos)
        q = StepQuantities(d, self.state.qdot)
        if self.task == "grasp":
            q.h_obj = object_height(scene)
            q.goal_dist = goal_distance(scene)
        elif self.task == "door":
            q.phi = scene.handle_angle
            q.psi = scene.door_angle
        else:
            q.theta = scene.valve_angle
        return q

    def _update_velocities(self) -> None:
        f = self._frames
        self._palm_vel = np.concatenate([
            (f.palm_pos - self._prev_palm_pos) / CONTROL_DT,
            angvel_from_quats(self._prev_palm_quat, f.palm_quat, CONTROL_DT)], axis=-1)
        tgt = target_pose(self.scene)
        self._target_vel = np.concatenate([
            (tgt[:, :3] - self._prev_target[:, :3]) / CONTROL_DT,
            angvel_from_quats(self._prev_target[:, 3:], tgt[:, 3:], CONTROL_DT)],
            axis=-1)
        self._prev_palm_pos = f.palm_pos.copy()
        self._prev_palm_quat = f.palm_quat.copy()
        self._prev_target = tgt

    def _reset_members(self, mask: Array) -> None:
        reset_rows(self.scene, mask, self.rngs)
        home = home_state(self.model, batch=(self.batch,))
        self.state.q[mask] = home.q[mask]
        self.state.qdot[mask] = home.qdot[mask]
        self._frames = forward_kinematics(self.model, self.state.q)
        self._bundle = detect_contacts(self._frames.sensor_pos, self.scene, self.layout)
        self._t[mask] = 0
        self._terminated[mask] = False
        d = target_distances(self.scene, self._frames.tip_pos)
        self.tracker.reset_where(mask, d, goal_distance(self.scene))
        self._prev_palm_pos[mask] = self._frames.palm_pos[mask]
        self._prev_palm_quat[mask] = self._frames.palm_quat[mask]
        self._prev_target[mask] = target_pose(self.scene)[mask]
        self._palm_vel[mask] = 0.0
        self._target_vel[mask] = 0.0

    # -- observations --------------------------------------------------------

    def _touch_block(self) -> Array:
        if self.config.ft_sensor:
            f = self._frames
            return wrist_ft_reading(self._bundle.force, self._bundle.sensor_pos,
                                    f.wrist_pos, f.wrist_quat)
        bits = binarize(self._bundle.magnitude, self.layout)
        if self.config.da_sensor:
            bits = np.zeros_like(bits)
        return bits

    def _observe(self) -> tuple[Array, Array]:
        f = self._frames
        palm = np.concatenate([f.palm_pos, f.palm_quat, self._palm_vel], axis=-1)
        tips = f.tip_rel.reshape(self.batch, -1)
        pobs = np.concatenate([
            self.state.q, self.state.qdot, self._touch_block(),
            palm, tips, self._task_info], axis=-1)
        d = target_distances(self.scene, f.tip_pos)
        indicators = np.stack([self.tracker.picked.astype(float),
                               self.tracker.rotated.astype(float)], axis=-1)
        block = np.concatenate([
            target_pose(self.scene), self._target_vel, d,
            physical_params(self.scene), indicators,
            self._bundle.magnitude], axis=-1)
        if self.config.wo_pinfo:
            block = np.zeros_like(block)
        vobs = np.concatenate([pobs, block], axis=-1)
        return pobs, vobs


# ---------------------------------------------------------------------------
# trajectory log
# ---------------------------------------------------------------------------


def obs_hash(obs: Array) -> str:
    return hashlib.sha256(np.ascontiguousarray(obs).tobytes()).hexdigest()[:16]


class TrajectoryLog:
    """JSON-lines record of one env's control steps, for replay checking."""

    def __init__(self, env_index: int = 0):
        self.env_index = env_index
        self.records: list[dict] = []

    def append(self, step: int, pobs: Array, action: Array,
               result: StepResult) -> None:
        i = self.env_index
        self.records.append({
            "step": step,
            "obs_hash": obs_hash(pobs[i]),
            "action": [round(float(a), 10) for a in action[i]],
            "reward": float(result.reward[i]),
            "r_reach": float(result.breakdown.r_reach[i]),
            "r_execute": float(result.breakdown.r_execute[i]),
            "penalty": float(result.breakdown.penalty[i]),
            "bonus_mask": int(result.breakdown.bonus_mask[i]),
            "done": bool(result.done[i]),
            "cause": CAUSE_NAMES[int(result.status.cause[i])],
        })

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")


def read_trajectory_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
