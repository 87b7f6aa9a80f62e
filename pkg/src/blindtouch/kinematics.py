"""Forward kinematics and PD joint control for the arm+hand chain.

The robot is a tree of revolute joints (default: 6 arm joints + 4 fingers x 4
joints = 22 DoF) with named sites for the palm, the four fingertips, the 16
touch-sensor spheres and the wrist. All kinematics run on quaternions with
purely elementwise numpy, so a batch of N configurations produces bit-identical
results to N single evaluations.

Conventions: quaternions are scalar-first (w, x, y, z); world frame has x
lateral, y pointing away from the robot across the table, z up. Angles in
radians, lengths in meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

Array = np.ndarray

CONTROL_DT = 0.1          # 10 Hz decision rate
SIM_DT = 0.01667          # physics step; one control step runs 6 of these
N_SUB_ITER = 6            # physics steps per control step
N_SUBSTEPS = 2            # Euler substeps per physics step


# ---------------------------------------------------------------------------
# quaternion helpers (batched over arbitrary leading axes)
# ---------------------------------------------------------------------------

def quat_identity(shape=()) -> Array:
    q = np.zeros(tuple(shape) + (4,))
    q[..., 0] = 1.0
    return q


def quat_mul(a: Array, b: Array) -> Array:
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q: Array) -> Array:
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_rotate(q: Array, v: Array) -> Array:
    """Rotate vectors v by quaternions q (v' = q v q*)."""
    qw = q[..., 0:1]
    qv = q[..., 1:]
    t = 2.0 * np.cross(qv, v)
    return v + qw * t + np.cross(qv, t)


def quat_from_axis_angle(axis: Array, angle) -> Array:
    """Unit axis (..., 3) and angle (...,) -> quaternion (..., 4)."""
    half = 0.5 * np.asarray(angle, dtype=np.float64)
    s = np.sin(half)
    return np.concatenate([np.cos(half)[..., None], axis * s[..., None]], axis=-1)


def quat_normalize(q: Array) -> Array:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> Array:
    qx = quat_from_axis_angle(np.array([1.0, 0, 0]), np.float64(roll))
    qy = quat_from_axis_angle(np.array([0, 1.0, 0]), np.float64(pitch))
    qz = quat_from_axis_angle(np.array([0, 0, 1.0]), np.float64(yaw))
    return quat_mul(qz, quat_mul(qy, qx))


def quat_to_mat(q: Array) -> Array:
    """Quaternion (..., 4) -> rotation matrix (..., 3, 3)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    r1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    r2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([r0, r1, r2], axis=-2)


def yaw_quat(yaw) -> Array:
    yaw = np.asarray(yaw, dtype=np.float64)
    axis = np.broadcast_to(np.array([0.0, 0.0, 1.0]), yaw.shape + (3,))
    return quat_from_axis_angle(axis, yaw)


def rotation_angle_about_axis(p_before: Array, p_after: Array, center: Array,
                              axis: Array) -> Array:
    """Signed angle swept by a point about an axis line (right-hand rule)."""
    r0 = p_before - center
    r1 = p_after - center
    r0 = r0 - np.sum(r0 * axis, axis=-1, keepdims=True) * axis
    r1 = r1 - np.sum(r1 * axis, axis=-1, keepdims=True) * axis
    sin_term = np.sum(np.cross(r0, r1) * axis, axis=-1)
    cos_term = np.sum(r0 * r1, axis=-1)
    ok = (np.linalg.norm(r0, axis=-1) > 1e-9) & (np.linalg.norm(r1, axis=-1) > 1e-9)
    return np.where(ok, np.arctan2(sin_term, np.where(ok, cos_term, 1.0)), 0.0)


def angvel_from_quats(q_old: Array, q_new: Array, dt: float) -> Array:
    """World-frame angular velocity taking q_old to q_new over dt."""
    dq = quat_mul(q_new, quat_conj(q_old))
    dq = dq * np.where(dq[..., 0:1] < 0.0, -1.0, 1.0)  # shortest arc
    vec = dq[..., 1:]
    s = np.linalg.norm(vec, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, np.clip(dq[..., 0:1], -1.0, 1.0))
    axis = np.where(s > 1e-12, vec / np.where(s > 1e-12, s, 1.0), 0.0)
    return axis * angle / dt


# ---------------------------------------------------------------------------
# robot model
# ---------------------------------------------------------------------------

AXES = {"x": np.array([1.0, 0.0, 0.0]),
        "y": np.array([0.0, 1.0, 0.0]),
        "z": np.array([0.0, 0.0, 1.0])}

SITE_KINDS = ("palm", "fingertip", "sensor", "wrist")
SENSOR_GROUPS = ("fingertip", "finger-link", "palm")


@dataclass
class Joint:
    name: str
    parent: int               # parent joint index, -1 = base
    offset: Array             # translation from parent frame, parent coords (3,)
    quat: Array               # fixed rotation applied before the axis rotation (4,)
    axis: str                 # 'x' | 'y' | 'z' in the joint's local frame
    lower: float
    upper: float
    vel_limit: float
    kp: float
    kd: float


@dataclass
class Site:
    name: str
    parent: int               # joint index the site is rigidly attached to
    offset: Array             # (3,) in the parent joint frame
    quat: Array               # (4,) fixed orientation in the parent joint frame
    kind: str                 # one of SITE_KINDS
    group: str = ""           # sensor group tag for kind == 'sensor'


@dataclass
class JointChainModel:
    """Tree-structured revolute chain plus marked frames.

    Joints must be listed so parents precede children. Construction
    precomputes stacked arrays and a level schedule so FK can advance joints
    of equal tree depth together (the four fingers run in one batch).
    """

    joints: list[Joint]
    sites: list[Site]
    base_pos: Array = field(default_factory=lambda: np.zeros(3))
    base_quat: Array = field(default_factory=lambda: quat_identity())
    home_q: Array | None = None

    def __post_init__(self):
        self.n_joints = len(self.joints)
        parents = np.array([j.parent for j in self.joints], dtype=int)
        if np.any(parents >= np.arange(self.n_joints)):
            raise ConfigError("joints must be listed with parents first (no cycles)")
        for j in self.joints:
            if j.axis not in AXES:
                raise ConfigError(f"joint {j.name}: unknown axis {j.axis!r}")
            if not j.lower < j.upper:
                raise ConfigError(f"joint {j.name}: lower limit must be below upper")
            if j.kp <= 0 or j.kd <= 0 or j.vel_limit <= 0:
                raise ConfigError(f"joint {j.name}: gains and velocity limit must be positive")
        self.parents = parents
        self.offsets = np.stack([j.offset for j in self.joints]).astype(np.float64)
        self.fixed_quats = np.stack([j.quat for j in self.joints]).astype(np.float64)
        self.axes = np.stack([AXES[j.axis] for j in self.joints])
        self.lower = np.array([j.lower for j in self.joints])
        self.upper = np.array([j.upper for j in self.joints])
        self.vel_limits = np.array([j.vel_limit for j in self.joints])
        self.kp = np.array([j.kp for j in self.joints])
        self.kd = np.array([j.kd for j in self.joints])
        if self.home_q is None:
            self.home_q = np.clip(np.zeros(self.n_joints), self.lower, self.upper)
        self.home_q = np.asarray(self.home_q, dtype=np.float64)
        if self.home_q.shape != (self.n_joints,):
            raise ConfigError("home_q length does not match joint count")

        depth = np.zeros(self.n_joints, dtype=int)
        for i, p in enumerate(parents):
            depth[i] = 0 if p < 0 else depth[p] + 1
        self.levels = [np.flatnonzero(depth == d) for d in range(depth.max() + 1)]

        for s in self.sites:
            if s.kind not in SITE_KINDS:
                raise ConfigError(f"site {s.name}: unknown kind {s.kind!r}")
            if not 0 <= s.parent < self.n_joints:
                raise ConfigError(f"site {s.name}: parent index out of range")
        self.site_parents = np.array([s.parent for s in self.sites], dtype=int)
        self.site_offsets = np.stack([s.offset for s in self.sites]).astype(np.float64)
        self.site_quats = np.stack([s.quat for s in self.sites]).astype(np.float64)
        self.palm_site = self._one_site("palm")
        self.wrist_site = self._one_site("wrist")
        self.fingertip_sites = np.array(
            [i for i, s in enumerate(self.sites) if s.kind == "fingertip"], dtype=int)
        self.sensor_sites = np.array(
            [i for i, s in enumerate(self.sites) if s.kind == "sensor"], dtype=int)
        if len(self.fingertip_sites) != 4:
            raise ConfigError("model must mark exactly 4 fingertip frames")
        if len(self.sensor_sites) != 16:
            raise ConfigError("model must mark exactly 16 sensor frames")
        groups = [self.sites[i].group for i in self.sensor_sites]
        if groups.count("fingertip") != 4 or groups.count("palm") != 4:
            raise ConfigError("sensors must include 4 fingertip and 4 palm sites")
        self.sensor_groups = groups

    def _one_site(self, kind: str) -> int:
        idx = [i for i, s in enumerate(self.sites) if s.kind == kind]
        if len(idx) != 1:
            raise ConfigError(f"model must mark exactly one {kind} site")
        return idx[0]

    @property
    def max_action_delta(self) -> Array:
        # largest joint-target step one 10 Hz action may request
        return self.vel_limits * CONTROL_DT


@dataclass
class RobotState:
    """Joint-space state; batched over arbitrary leading axes."""

    q: Array
    qdot: Array

    def copy(self) -> "RobotState":
        return RobotState(self.q.copy(), self.qdot.copy())


def home_state(model: JointChainModel, batch: tuple[int, ...] = ()) -> RobotState:
    q = np.broadcast_to(model.home_q, tuple(batch) + (model.n_joints,)).copy()
    return RobotState(q, np.zeros_like(q))


@dataclass
class FrameSet:
    """World-frame poses produced by one FK evaluation."""

    joint_pos: Array        # (..., J, 3)
    joint_quat: Array       # (..., J, 4)
    site_pos: Array         # (..., S, 3)
    palm_pos: Array         # (..., 3)
    palm_quat: Array        # (..., 4)
    tip_pos: Array          # (..., 4, 3) world fingertips
    tip_rel: Array          # (..., 4, 3) fingertips in the palm frame
    sensor_pos: Array       # (..., 16, 3)
    wrist_pos: Array        # (..., 3)
    wrist_quat: Array       # (..., 4)


def forward_kinematics(model: JointChainModel, q: Array) -> FrameSet:
    """Compose the joint tree and site frames for configurations q (..., J)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != model.n_joints:
        raise ConfigError(f"q length {q.shape[-1]} != {model.n_joints} joints")
    if not np.isfinite(q).all():
        raise ConfigError("non-finite joint values")
    batch = q.shape[:-1]
    J = model.n_joints
    jpos = np.empty(batch + (J, 3))
    jquat = np.empty(batch + (J, 4))

    base_pos = np.broadcast_to(model.base_pos, batch + (3,))
    base_quat = np.broadcast_to(model.base_quat, batch + (4,))
    for level in model.levels:
        par = model.parents[level]
        if par[0] < 0:
            # root level: every parent is the base
            p_par = base_pos[..., None, :]
            q_par = base_quat[..., None, :]
        else:
            p_par = jpos[..., par, :]
            q_par = jquat[..., par, :]
        q_local = quat_mul(model.fixed_quats[level],
                           quat_from_axis_angle(model.axes[level], q[..., level]))
        jquat[..., level, :] = quat_mul(q_par, q_local)
        jpos[..., level, :] = p_par + quat_rotate(q_par, model.offsets[level])

    spar = model.site_parents
    site_pos = jpos[..., spar, :] + quat_rotate(jquat[..., spar, :], model.site_offsets)

    palm_parent = model.site_parents[model.palm_site]
    palm_pos = site_pos[..., model.palm_site, :]
    palm_quat = quat_mul(jquat[..., palm_parent, :], model.site_quats[model.palm_site])
    tip_pos = site_pos[..., model.fingertip_sites, :]
    tip_rel = quat_rotate(quat_conj(palm_quat)[..., None, :], tip_pos - palm_pos[..., None, :])
    wrist_parent = model.site_parents[model.wrist_site]
    return FrameSet(
        joint_pos=jpos, joint_quat=jquat, site_pos=site_pos,
        palm_pos=palm_pos, palm_quat=palm_quat,
        tip_pos=tip_pos, tip_rel=tip_rel,
        sensor_pos=site_pos[..., model.sensor_sites, :],
        wrist_pos=site_pos[..., model.wrist_site, :],
        wrist_quat=quat_mul(jquat[..., wrist_parent, :], model.site_quats[model.wrist_site]),
    )


def pd_position_step(state: RobotState, targets: Array, model: JointChainModel,
                     dt: float) -> RobotState:
    """Semi-implicit Euler step of the PD position controller.

    Velocities clamp to the per-joint limit; positions clamp to the joint
    range, and clamping zeroes the velocity at the limit.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    qdot = state.qdot + dt * (model.kp * (targets - state.q) - model.kd * state.qdot)
    qdot = np.clip(qdot, -model.vel_limits, model.vel_limits)
    q = state.q + dt * qdot
    hit = (q < model.lower) | (q > model.upper)
    q = np.clip(q, model.lower, model.upper)
    qdot = np.where(hit, 0.0, qdot)
    return RobotState(q, qdot)


def action_to_targets(action: Array, state: RobotState, model: JointChainModel) -> Array:
    """Map a normalized action in [-1, 1]^J to joint position targets.

    Targets are relative: current q plus the action-scaled per-joint maximum
    step (velocity limit times the 0.1 s control period), clamped to limits.
    """
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    return np.clip(state.q + a * model.max_action_delta, model.lower, model.upper)


# ---------------------------------------------------------------------------
# model file format (text, versioned):
#   robot-model v1
#   base <x> <y> <z> <qw> <qx> <qy> <qz>
#   joint <name> <parent|-> <axis> <ox> <oy> <oz> <qw> <qx> <qy> <qz> \
#         <lower> <upper> <vel_limit> <kp> <kd>
#   site <name> <parent joint> <kind> <ox> <oy> <oz> <qw> <qx> <qy> <qz> [group]
#   home <q0> ... <q21>
# ---------------------------------------------------------------------------

MODEL_MAGIC = "robot-model v1"


def save_model(model: JointChainModel, path) -> None:
    with open(path, "w") as f:
        f.write(MODEL_MAGIC + "\n")
        f.write("base " + " ".join("%.17g" % v for v in (*model.base_pos, *model.base_quat)) + "\n")
        for j in model.joints:
            parent = "-" if j.parent < 0 else model.joints[j.parent].name
            nums = (*j.offset, *j.quat, j.lower, j.upper, j.vel_limit, j.kp, j.kd)
            f.write(f"joint {j.name} {parent} {j.axis} "
                    + " ".join("%.17g" % v for v in nums) + "\n")
        for s in model.sites:
            group = (" " + s.group) if s.group else ""
            f.write(f"site {s.name} {model.joints[s.parent].name} {s.kind} "
                    + " ".join("%.17g" % v for v in (*s.offset, *s.quat)) + group + "\n")
        f.write("home " + " ".join("%.17g" % v for v in model.home_q) + "\n")


def load_model(path_or_file) -> JointChainModel:
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file) as f:
            text = f.read()
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != MODEL_MAGIC:
        raise ConfigError("bad robot model header")
    joints: list[Joint] = []
    sites: list[Site] = []
    name_to_idx: dict[str, int] = {}
    base_pos = np.zeros(3)
    base_quat = quat_identity()
    home = None
    for ln in lines[1:]:
        parts = ln.split()
        tag = parts[0]
        if tag == "base":
            vals = [float(v) for v in parts[1:8]]
            base_pos, base_quat = np.array(vals[:3]), np.array(vals[3:7])
        elif tag == "joint":
            name, parent, axis = parts[1], parts[2], parts[3]
            vals = [float(v) for v in parts[4:16]]
            if parent != "-" and parent not in name_to_idx:
                raise ConfigError(f"joint {name}: unknown parent {parent!r}")
            joints.append(Joint(
                name=name, parent=-1 if parent == "-" else name_to_idx[parent],
                offset=np.array(vals[0:3]), quat=np.array(vals[3:7]), axis=axis,
                lower=vals[7], upper=vals[8], vel_limit=vals[9],
                kp=vals[10], kd=vals[11]))
            name_to_idx[name] = len(joints) - 1
        elif tag == "site":
            name, parent, skind = parts[1], parts[2], parts[3]
            if parent not in name_to_idx:
                raise ConfigError(f"site {name}: unknown parent joint {parent!r}")
            vals = [float(v) for v in parts[4:11]]
            group = parts[11] if len(parts) > 11 else ""
            sites.append(Site(name=name, parent=name_to_idx[parent],
                              offset=np.array(vals[0:3]), quat=np.array(vals[3:7]),
                              kind=skind, group=group))
        elif tag == "home":
            home = np.array([float(v) for v in parts[1:]])
        else:
            raise ConfigError(f"unknown model line: {ln!r}")
    return JointChainModel(joints, sites, base_pos=base_pos, base_quat=base_quat,
                           home_q=home)


# ---------------------------------------------------------------------------
# default robot
#
# Arm: simplified vertical 6-joint chain with UR5e-like segment lengths
# (pan z / lift y / elbow y / wrist1 y / wrist2 z / wrist3 y), base yawed 90
# degrees so the sagittal work plane is the world y-z plane (y = depth).
# Hand: palm plate under the wrist facing down; index/middle/ring fingers side
# by side extending away from the robot, a thumb opposing them across the
# palm, each with one fingertip and two link sensors; four palm sensors.
# ---------------------------------------------------------------------------

FINGER_SEGMENTS = (0.054, 0.0384, 0.0437)
FINGERTIP_OFFSET = 0.012
HAND_MOUNT_POS = np.array([0.0, 0.0, 0.07])       # palm origin in the wrist-3 frame
FINGER_MOUNT_X = 0.095                            # finger bases, palm-frame x
THUMB_MOUNT_X = 0.02
FINGER_SPREAD = 0.044


def _finger(joints, sites, name, parent, mount_pos, mount_quat, kp, kd):
    l1, l2, l3 = FINGER_SEGMENTS
    vel = 4.0
    joints.append(Joint(f"{name}_abd", parent, mount_pos, mount_quat,
                        "z", -0.47, 0.47, vel, kp, kd))
    base = len(joints) - 1
    joints.append(Joint(f"{name}_mcp", base, np.zeros(3), quat_identity(), "y",
                        -0.20, 1.80, vel, kp, kd))
    joints.append(Joint(f"{name}_pip", base + 1, np.array([l1, 0.0, 0.0]),
                        quat_identity(), "y", -0.17, 1.80, vel, kp, kd))
    joints.append(Joint(f"{name}_dip", base + 2, np.array([l2, 0.0, 0.0]),
                        quat_identity(), "y", -0.16, 1.80, vel, kp, kd))
    last = base + 3
    tip = np.array([l3 + FINGERTIP_OFFSET, 0.0, 0.0])
    sites.append(Site(f"{name}_tip", last, tip, quat_identity(), "fingertip"))
    sites.append(Site(f"{name}_s_tip", last, tip, quat_identity(), "sensor", "fingertip"))
    # link sensors on the gripping (local -z) face
    sites.append(Site(f"{name}_s_dist", last, np.array([0.5 * l3, 0.0, -0.008]),
                      quat_identity(), "sensor", "finger-link"))
    sites.append(Site(f"{name}_s_mid", base + 2, np.array([0.5 * l2, 0.0, -0.008]),
                      quat_identity(), "sensor", "finger-link"))


def default_robot_model() -> JointChainModel:
    """Build the canonical 22-DoF arm+hand model with its home pose."""
    kp, kd = 100.0, 2.0 * np.sqrt(100.0)
    arm_vel = 3.14
    joints: list[Joint] = []
    sites: list[Site] = []
    qi = quat_identity()
    joints.append(Joint("arm_pan", -1, np.array([0.0, 0.0, 0.1625]), qi,
                        "z", -3.14, 3.14, arm_vel, kp, kd))
    joints.append(Joint("arm_lift", 0, np.zeros(3), qi, "y", -3.14, 3.14, arm_vel, kp, kd))
    joints.append(Joint("arm_elbow", 1, np.array([0.0, 0.0, 0.425]), qi,
                        "y", -2.90, 2.90, arm_vel, kp, kd))
    joints.append(Joint("arm_wrist1", 2, np.array([0.0, 0.0, 0.3922]), qi,
                        "y", -3.14, 3.14, arm_vel, kp, kd))
    joints.append(Joint("arm_wrist2", 3, np.array([0.0, 0.0, 0.0997]), qi,
                        "z", -3.14, 3.14, arm_vel, kp, kd))
    joints.append(Joint("arm_wrist3", 4, np.array([0.0, 0.0, 0.0996]), qi,
                        "y", -1.57, 1.57, arm_vel, kp, kd))

    # palm frame in the wrist-3 frame: rotate pi about y so that with the
    # wrist pointing down the palm x axis points away from the robot and the
    # gripping face is the palm's -z side
    mount_quat = quat_from_rpy(0.0, np.pi, 0.0)

    def in_palm(p):
        return HAND_MOUNT_POS + quat_rotate(mount_quat, np.asarray(p, dtype=np.float64))

    sites.append(Site("wrist", 5, np.zeros(3), qi, "wrist"))
    sites.append(Site("palm", 5, in_palm([0.045, 0.0, 0.0]), mount_quat, "palm"))
    for fname, fy in (("index", FINGER_SPREAD), ("middle", 0.0), ("ring", -FINGER_SPREAD)):
        _finger(joints, sites, fname, 5, in_palm([FINGER_MOUNT_X, fy, 0.0]),
                mount_quat, kp, kd)
    thumb_quat = quat_mul(mount_quat, quat_from_rpy(0.0, 0.0, np.pi))
    _finger(joints, sites, "thumb", 5, in_palm([THUMB_MOUNT_X, 0.0, 0.0]),
            thumb_quat, kp, kd)
    for k, (sx, sy) in enumerate([(0.03, 0.022), (0.03, -0.022),
                                  (0.07, 0.022), (0.07, -0.022)]):
        sites.append(Site(f"palm_s{k}", 5, in_palm([sx, sy, -0.012]),
                          mount_quat, "sensor", "palm"))

    # base yawed so the work plane is world y-z; home posture set numerically
    # (see scripts in demos/) to put the palm above the table, facing down
    model = JointChainModel(joints, sites,
                            base_pos=np.zeros(3),
                            base_quat=quat_from_rpy(0.0, 0.0, np.pi / 2),
                            home_q=_HOME_Q.copy())
    return model


# home posture: wrist pointing straight down (lift+elbow+wrist1 = pi), palm
# 0.17 m above the table plane at depth 0.495, fingers half-curled; arm
# angles solved numerically and frozen here
_HOME_Q = np.array([
    0.0, 0.198, 1.738, np.pi - 1.936, 0.0, 0.0,
    0.0, 0.60, 0.45, 0.30,
    0.0, 0.60, 0.45, 0.30,
    0.0, 0.60, 0.45, 0.30,
    0.0, 0.60, 0.45, 0.30,
])
