"""Task worlds: grasp / door / valve geometry, contacts, and coupling rules.

The simulator is quasi-static: instead of rigid-body dynamics, contacts
against primitive shapes produce spring forces for the tactile channel, and
kinematic coupling rules let sustained contact actuate the task degrees of
freedom (object attachment, handle angle, door angle, valve angle). All state
is batched with a leading env axis and every update is elementwise, so a batch
of N scenes evolves bit-identically to N scenes stepped one by one.

World frame: x lateral, y pointing away from the robot base across the table,
z up; the table top is the plane z = 0.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .kinematics import quat_conj, quat_identity, quat_mul, quat_rotate, \
    rotation_angle_about_axis, yaw_quat
from .tactile import N_SENSORS, SensorLayout

Array = np.ndarray

TASKS = ("grasp", "door", "valve")

Z_AXIS = np.array([0.0, 0.0, 1.0])

# indicator thresholds shared with the reward decomposition
PICK_HEIGHT = 0.10            # m, object height that latches "picked"
ROTATED_ANGLE = 1.047         # rad, handle angle that latches "rotated" (60 deg)
OPENED_ANGLE = 0.873          # rad, door angle counted as opened (50 deg)
VALVE_SUCCESS_ANGLE = 2.356   # rad, valve rotation counted as success (135 deg)


# ---------------------------------------------------------------------------
# object set: primitive stand-ins with tabletop-scale dimensions
# shape: box -> dims are half extents; cylinder -> (radius, half height, 0);
# sphere -> (radius, 0, 0)
# ---------------------------------------------------------------------------

OBJECT_SET: tuple[tuple[str, str, tuple[float, float, float]], ...] = (
    ("soup_can", "cylinder", (0.033, 0.0505, 0.0)),
    ("tuna_can", "cylinder", (0.0425, 0.0165, 0.0)),
    ("mug", "cylinder", (0.042, 0.0405, 0.0)),
    ("short_can", "cylinder", (0.035, 0.027, 0.0)),
    ("sugar_box", "box", (0.0225, 0.0445, 0.0875)),
    ("pudding_box", "box", (0.035, 0.055, 0.0195)),
    ("gelatin_box", "box", (0.0365, 0.0425, 0.015)),
    ("meat_can", "box", (0.05, 0.0415, 0.0285)),
    ("wood_block", "box", (0.0425, 0.0445, 0.085)),
    ("foam_brick", "box", (0.025, 0.0375, 0.0255)),
    ("apple", "sphere", (0.0375, 0.0, 0.0)),
    ("orange", "sphere", (0.0365, 0.0, 0.0)),
    ("pear", "sphere", (0.033, 0.0, 0.0)),
    ("tennis_ball", "sphere", (0.0335, 0.0, 0.0)),
    ("golf_ball", "sphere", (0.0215, 0.0, 0.0)),
)

SHAPE_IDS = {"box": 0, "cylinder": 1, "sphere": 2}
OBJECT_NAMES = tuple(name for name, _, _ in OBJECT_SET)


def object_rest_height(shape: str, dims) -> float:
    if shape == "box":
        return float(dims[2])
    if shape == "cylinder":
        return float(dims[1])
    return float(dims[0])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlacementSampler:
    """Uniform placement offsets from a task-specific center, plus yaw."""

    center_x: float
    center_y: float
    range_x: float
    range_y: float
    yaw_low: float = 0.0
    yaw_high: float = 0.0

    def __post_init__(self):
        if self.range_x < 0 or self.range_y < 0:
            raise ConfigError("placement ranges must be non-negative")
        if self.yaw_high < self.yaw_low:
            raise ConfigError("yaw range inverted")

    def sample(self, rng: np.random.Generator) -> tuple[float, float, float]:
        """One draw: (x, y, yaw). Draw order is fixed for determinism."""
        x = self.center_x + rng.uniform(-self.range_x, self.range_x)
        y = self.center_y + rng.uniform(-self.range_y, self.range_y)
        yaw = rng.uniform(self.yaw_low, self.yaw_high) \
            if self.yaw_high > self.yaw_low else self.yaw_low
        return x, y, yaw


def default_sampler(task: str) -> PlacementSampler:
    """Placement randomization defaults: full published ranges per task."""
    if task == "grasp":
        return PlacementSampler(0.0, 0.51, 0.30, 0.15, -np.pi, np.pi)
    if task == "door":
        return PlacementSampler(0.0, 0.62, 0.55, 0.20)
    if task == "valve":
        return PlacementSampler(0.0, 0.50, 0.30, 0.30, -np.pi, np.pi)
    raise ConfigError(f"unknown task {task!r}")


@dataclass(frozen=True)
class SceneConfig:
    """Geometry, coupling, and randomization parameters for one task world."""

    task: str = "grasp"
    # placement randomization
    center_x: float = 0.0
    center_y: float = 0.51
    range_x: float = 0.30
    range_y: float = 0.15
    yaw_low: float = -np.pi
    yaw_high: float = np.pi
    # contact synthesis
    contact_stiffness: float = 100.0   # N/m of penetration depth
    sensor_radius: float = 0.0         # dilates primitive surfaces if > 0
    # table extent (for the fallen-object fault)
    table_half_x: float = 0.9
    table_y_min: float = 0.05
    table_y_max: float = 1.05
    # grasp
    objects: tuple[str, ...] = OBJECT_NAMES
    goal_x: float = 0.0
    goal_y: float = 0.51
    goal_z: float = 0.25
    goal_tolerance: float = 0.05
    attach_normal_dot: float = -0.3
    detach_hold: int = 3               # sub-iterations below 2 contacts before drop
    # door geometry (door frame is axis-aligned; hinge on the +x edge)
    panel_half_width: float = 0.30
    panel_half_thickness: float = 0.012
    panel_height: float = 0.55
    handle_height: float = 0.25
    handle_offset_x: float = 0.18      # hub this far from panel center toward -x
    handle_standoff: float = 0.045     # hub protrusion toward the robot
    handle_length: float = 0.10
    handle_radius: float = 0.014
    handle_range: float = 1.4          # mechanical phi range
    door_range: float = 1.6            # mechanical psi range
    handle_cap: float = 0.1            # max |dphi| per control step
    door_cap: float = 0.1              # max |dpsi| per control step
    # valve geometry
    valve_height: float = 0.12
    valve_ring_radius: float = 0.06
    valve_tube_radius: float = 0.012
    pedestal_radius: float = 0.02
    valve_cap: float = 0.2             # max dtheta per control step
    valve_slack: float = 0.0           # how far theta may retreat below its max

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        unknown = [n for n in self.objects if n not in OBJECT_NAMES]
        if unknown:
            raise ConfigError(f"unknown objects {unknown}")
        if not self.objects and self.task == "grasp":
            raise ConfigError("grasp task needs at least one object")
        if self.contact_stiffness <= 0:
            raise ConfigError("contact stiffness must be positive")

    def sampler(self) -> PlacementSampler:
        return PlacementSampler(self.center_x, self.center_y,
                                self.range_x, self.range_y,
                                self.yaw_low, self.yaw_high)

    @classmethod
    def for_task(cls, task: str, **overrides) -> "SceneConfig":
        s = default_sampler(task)
        base = dict(task=task, center_x=s.center_x, center_y=s.center_y,
                    range_x=s.range_x, range_y=s.range_y,
                    yaw_low=s.yaw_low, yaw_high=s.yaw_high)
        if task == "valve":
            base["goal_y"] = 0.50
        base.update(overrides)
        return cls(**base)


# ---------------------------------------------------------------------------
# scene state (batched)
# ---------------------------------------------------------------------------


@dataclass
class SceneState:
    """World state for a batch of identical-task scenes.

    Grasp fields hold the object pose and attachment bookkeeping; door fields
    the handle/door angles and assembly placement; valve fields the
    accumulated angle and placement. Unused groups are None.
    """

    task: str
    cfg: SceneConfig
    batch: int
    # grasp
    obj_index: Array | None = None       # (B,) int into OBJECT_SET
    obj_dims: Array | None = None        # (B, 3)
    obj_shape: Array | None = None       # (B,) int SHAPE_IDS
    obj_pos: Array | None = None         # (B, 3)
    obj_quat: Array | None = None        # (B, 4)
    rest_z: Array | None = None          # (B,)
    attached: Array | None = None        # (B,) bool
    attach_rel_pos: Array | None = None  # (B, 3) object in palm frame
    attach_rel_quat: Array | None = None # (B, 4)
    loose_count: Array | None = None     # (B,) int sub-iterations under 2 contacts
    goal: Array | None = None            # (B, 3)
    # door
    door_center: Array | None = None     # (B, 3) assembly center on the table
    handle_angle: Array | None = None    # (B,) phi
    door_angle: Array | None = None      # (B,) psi
    unlatched: Array | None = None       # (B,) bool, phi exceeded ROTATED_ANGLE
    # valve
    valve_center: Array | None = None    # (B, 3) rim center (z = valve_height)
    valve_angle: Array | None = None     # (B,) theta, ratcheted
    valve_angle_max: Array | None = None # (B,)
    valve_yaw: Array | None = None       # (B,) sampled but geometrically inert

    def copy(self) -> "SceneState":
        def c(v):
            return v.copy() if isinstance(v, np.ndarray) else v
        return dataclasses.replace(
            self, **{f.name: c(getattr(self, f.name))
                     for f in dataclasses.fields(self)
                     if f.name not in ("task", "cfg", "batch")})


@dataclass
class ContactBundle:
    """detect_contacts output: net forces plus coupling bookkeeping."""

    force: Array            # (B, 16, 3) net world-frame force on each sensor
    magnitude: Array        # (B, 16)
    touching_target: Array  # (B, 16) bool, touching the task's actuated body
    target_normal: Array    # (B, 16, 3) outward normal of the target at contact
    sensor_pos: Array       # (B, 16, 3) the positions the forces were found at
    tip_mask: Array         # (16,) bool, which sensors sit on fingertips


# ---------------------------------------------------------------------------
# signed-distance primitives (elementwise; p is (..., 3))
# ---------------------------------------------------------------------------


def _safe_unit(v, fallback):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    ok = n > 1e-12
    return np.where(ok, v / np.where(ok, n, 1.0), fallback)


def sdf_box(p: Array, half: Array) -> tuple[Array, Array]:
    q = np.abs(p) - half
    outside_vec = np.maximum(q, 0.0)
    outside = np.linalg.norm(outside_vec, axis=-1)
    inner_max = np.maximum(q[..., 0], np.maximum(q[..., 1], q[..., 2]))
    sd = outside + np.minimum(inner_max, 0.0)
    sgn = np.where(p >= 0.0, 1.0, -1.0)
    n_out = _safe_unit(sgn * outside_vec, np.broadcast_to(Z_AXIS, p.shape))
    # inside: face of least penetration, ties broken x, then y, then z
    ax = q[..., 0] >= inner_max - 1e-18
    ay = (~ax) & (q[..., 1] >= inner_max - 1e-18)
    az = ~(ax | ay)
    n_in = sgn * np.stack([ax, ay, az], axis=-1).astype(np.float64)
    n = np.where((outside > 0.0)[..., None], n_out, n_in)
    return sd, n


def sdf_cylinder(p: Array, radius: Array, half_h: Array) -> tuple[Array, Array]:
    rxy = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2)
    dr = rxy - radius
    dz = np.abs(p[..., 2]) - half_h
    vr = np.maximum(dr, 0.0)
    vz = np.maximum(dz, 0.0)
    outside = np.sqrt(vr * vr + vz * vz)
    sd = outside + np.minimum(np.maximum(dr, dz), 0.0)
    radial = _safe_unit(np.concatenate([p[..., :2], np.zeros_like(p[..., :1])], axis=-1),
                        np.broadcast_to(np.array([1.0, 0.0, 0.0]), p.shape))
    axial = np.where(p[..., 2:] >= 0.0, 1.0, -1.0) * Z_AXIS
    n_out = _safe_unit(vr[..., None] * radial + vz[..., None] * axial,
                       np.broadcast_to(Z_AXIS, p.shape))
    n_in = np.where((dr > dz)[..., None], radial, axial)
    n = np.where((outside > 0.0)[..., None], n_out, n_in)
    return sd, n


def sdf_sphere(p: Array, radius: Array) -> tuple[Array, Array]:
    d = np.linalg.norm(p, axis=-1)
    n = _safe_unit(p, np.broadcast_to(Z_AXIS, p.shape))
    return d - radius, n


def sdf_plane_z(p: Array, z0: float = 0.0) -> tuple[Array, Array]:
    sd = p[..., 2] - z0
    return sd, np.broadcast_to(Z_AXIS, p.shape)


def sdf_capsule(p: Array, a: Array, b: Array, radius: float) -> tuple[Array, Array]:
    ab = b - a
    denom = np.sum(ab * ab, axis=-1, keepdims=True)
    t = np.sum((p - a) * ab, axis=-1, keepdims=True) / np.where(denom > 0, denom, 1.0)
    closest = a + np.clip(t, 0.0, 1.0) * ab
    delta = p - closest
    return np.linalg.norm(delta, axis=-1) - radius, _safe_unit(
        delta, np.broadcast_to(Z_AXIS, p.shape))


def sdf_torus_z(p: Array, center: Array, ring_r: float, tube_r: float
                ) -> tuple[Array, Array]:
    rel = p - center
    radial = _safe_unit(
        np.concatenate([rel[..., :2], np.zeros_like(rel[..., :1])], axis=-1),
        np.broadcast_to(np.array([1.0, 0.0, 0.0]), p.shape))
    ring_pt = center + ring_r * radial
    delta = p - ring_pt
    return np.linalg.norm(delta, axis=-1) - tube_r, _safe_unit(
        delta, np.broadcast_to(Z_AXIS, p.shape))


def object_sdf(p_world: Array, pos: Array, quat: Array, shape: Array,
               dims: Array) -> tuple[Array, Array]:
    """SDF of per-env primitives at world points; p_world (..., 3) broadcasts
    against pos/quat/dims carrying a matching env axis."""
    local = quat_rotate(quat_conj(quat), p_world - pos)
    sd_b, n_b = sdf_box(local, dims)
    sd_c, n_c = sdf_cylinder(local, dims[..., 0], dims[..., 1])
    sd_s, n_s = sdf_sphere(local, dims[..., 0])
    is_box = shape == SHAPE_IDS["box"]
    is_cyl = shape == SHAPE_IDS["cylinder"]
    sd = np.where(is_box, sd_b, np.where(is_cyl, sd_c, sd_s))
    n_local = np.where(is_box[..., None], n_b, np.where(is_cyl[..., None], n_c, n_s))
    return sd, quat_rotate(quat, n_local)


# ---------------------------------------------------------------------------
# door/valve geometry helpers
# ---------------------------------------------------------------------------


def door_hinge(scene: SceneState) -> Array:
    """World position of the vertical hinge line (z component zero)."""
    cfg = scene.cfg
    h = scene.door_center.copy()
    h[..., 0] += cfg.panel_half_width
    return h


def handle_hub(scene: SceneState) -> Array:
    """World position of the handle hub, following the door swing."""
    cfg = scene.cfg
    hub0 = scene.door_center + np.stack([
        np.full(scene.batch, -cfg.handle_offset_x),
        np.full(scene.batch, -cfg.handle_standoff),
        np.full(scene.batch, cfg.handle_height)], axis=-1)
    hinge = door_hinge(scene)
    swing = yaw_quat(scene.door_angle)
    return hinge + quat_rotate(swing, hub0 - hinge)


def handle_axis(scene: SceneState) -> Array:
    """Axis the lever rotates about: the panel's outward (robot-facing) normal."""
    swing = yaw_quat(scene.door_angle)
    return quat_rotate(swing, np.broadcast_to(np.array([0.0, -1.0, 0.0]),
                                              (scene.batch, 3)))


def handle_tip(scene: SceneState) -> Array:
    """World position of the free end of the lever bar."""
    cfg = scene.cfg
    phi = scene.handle_angle
    # bar swings from -x toward -z as phi grows (pressing the lever down)
    d_local = np.stack([-np.cos(phi), np.zeros_like(phi), -np.sin(phi)], axis=-1)
    swing = yaw_quat(scene.door_angle)
    return handle_hub(scene) + cfg.handle_length * quat_rotate(swing, d_local)


def _door_local(scene: SceneState, p: Array) -> tuple[Array, Array]:
    """Map world points into unswung door coordinates; returns (local, swing)."""
    hinge = door_hinge(scene)[..., None, :]
    swing = yaw_quat(scene.door_angle)[..., None, :]
    return quat_rotate(quat_conj(swing), p - hinge) + hinge, swing


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_initial(cfg: SceneConfig, rngs: list[np.random.Generator]) -> SceneState:
    """Build a freshly randomized batch of scenes, one rng stream per env.

    Each env consumes draws only from its own generator, in a fixed order,
    so batched sampling reproduces sequential sampling exactly.
    """
    batch = len(rngs)
    sampler = cfg.sampler()
    xs = np.empty(batch)
    ys = np.empty(batch)
    yaws = np.empty(batch)
    for i, rng in enumerate(rngs):
        xs[i], ys[i], yaws[i] = sampler.sample(rng)

    scene = SceneState(task=cfg.task, cfg=cfg, batch=batch)
    if cfg.task == "grasp":
        catalog = [OBJECT_SET[OBJECT_NAMES.index(n)] for n in cfg.objects]
        picks = np.array([rng.integers(len(catalog)) for rng in rngs])
        dims = np.stack([np.array(catalog[k][2]) for k in picks])
        shapes = np.array([SHAPE_IDS[catalog[k][1]] for k in picks])
        rest = np.array([object_rest_height(catalog[k][1], catalog[k][2])
                         for k in picks])
        scene.obj_index = np.array([OBJECT_NAMES.index(catalog[k][0]) for k in picks])
        scene.obj_dims = dims
        scene.obj_shape = shapes
        scene.rest_z = rest
        scene.obj_pos = np.stack([xs, ys, rest], axis=-1)
        scene.obj_quat = yaw_quat(yaws)
        scene.attached = np.zeros(batch, dtype=bool)
        scene.attach_rel_pos = np.zeros((batch, 3))
        scene.attach_rel_quat = np.broadcast_to(quat_identity(), (batch, 4)).copy()
        scene.loose_count = np.zeros(batch, dtype=np.int64)
        scene.goal = np.broadcast_to(
            np.array([cfg.goal_x, cfg.goal_y, cfg.goal_z]), (batch, 3)).copy()
    elif cfg.task == "door":
        scene.door_center = np.stack([xs, ys, np.zeros(batch)], axis=-1)
        scene.handle_angle = np.zeros(batch)
        scene.door_angle = np.zeros(batch)
        scene.unlatched = np.zeros(batch, dtype=bool)
    else:
        scene.valve_center = np.stack([xs, ys, np.full(batch, cfg.valve_height)],
                                      axis=-1)
        scene.valve_angle = np.zeros(batch)
        scene.valve_angle_max = np.zeros(batch)
        scene.valve_yaw = yaws.copy()
    return scene


def reset_rows(scene: SceneState, mask: Array,
               rngs: list[np.random.Generator]) -> None:
    """Resample the scenes where mask is set, in place (per-env episode reset).

    rngs is the full per-env list; only the masked envs consume draws, each
    from its own stream, so auto-reset stays bit-identical to running that
    env alone.
    """
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return
    sub = sample_initial(scene.cfg, [rngs[i] for i in idx])
    for f in dataclasses.fields(SceneState):
        if f.name in ("task", "cfg", "batch"):
            continue
        dst = getattr(scene, f.name)
        if dst is None:
            continue
        dst[idx] = getattr(sub, f.name)


# ---------------------------------------------------------------------------
# contacts
# ---------------------------------------------------------------------------


def _accumulate(force, sd, normal, depth_mask, kc):
    depth = np.maximum(-sd, 0.0) * depth_mask
    return force + kc * depth[..., None] * normal


def detect_contacts(sensor_pos: Array, scene: SceneState,
                    layout: SensorLayout) -> ContactBundle:
    """Net spring force on every sensor from all primitives in the scene.

    sensor_pos is (B, 16, 3) world positions. Penetration depth is measured
    from the sensor center past the (optionally dilated) primitive surface.
    The layout supplies sensor group tags for the coupling rules; its active
    mask does NOT gate forces here (deactivated sensors still feel physics,
    they just read zero in the binarized observation).
    """
    cfg = scene.cfg
    sensor_pos = np.asarray(sensor_pos, dtype=np.float64)
    if sensor_pos.shape[-2] != N_SENSORS:
        raise ConfigError(f"expected {N_SENSORS} sensor positions")
    kc = cfg.contact_stiffness
    rs = cfg.sensor_radius
    B = scene.batch
    force = np.zeros_like(sensor_pos)

    # table plane under everything
    sd_t, n_t = sdf_plane_z(sensor_pos)
    force = _accumulate(force, sd_t - rs, n_t, 1.0, kc)

    if scene.task == "grasp":
        sd, n = object_sdf(sensor_pos, scene.obj_pos[:, None, :],
                           scene.obj_quat[:, None, :],
                           scene.obj_shape[:, None], scene.obj_dims[:, None, :])
        sd = sd - rs
        force = _accumulate(force, sd, n, 1.0, kc)
        touching = sd < 0.0
        target_normal = np.where(touching[..., None], n, 0.0)
    elif scene.task == "door":
        local, swing = _door_local(scene, sensor_pos)
        # panel box in unswung coordinates
        centers = scene.door_center + np.array([0.0, 0.0, cfg.panel_height / 2.0])
        half = np.array([cfg.panel_half_width, cfg.panel_half_thickness,
                         cfg.panel_height / 2.0])
        sd_p, n_p = sdf_box(local - centers[:, None, :], half)
        force = _accumulate(force, sd_p - rs, quat_rotate(swing, n_p), 1.0, kc)
        # lever bar capsule (hub to tip), also in unswung coordinates
        hub0 = scene.door_center + np.stack([
            np.full(B, -cfg.handle_offset_x),
            np.full(B, -cfg.handle_standoff),
            np.full(B, cfg.handle_height)], axis=-1)
        phi = scene.handle_angle
        d0 = np.stack([-np.cos(phi), np.zeros_like(phi), -np.sin(phi)], axis=-1)
        tip0 = hub0 + cfg.handle_length * d0
        sd_h, n_h = sdf_capsule(local, hub0[:, None, :], tip0[:, None, :],
                                cfg.handle_radius)
        sd_h = sd_h - rs
        n_h_world = quat_rotate(swing, n_h)
        force = _accumulate(force, sd_h, n_h_world, 1.0, kc)
        touching = sd_h < 0.0
        target_normal = np.where(touching[..., None], n_h_world, 0.0)
    else:
        center = scene.valve_center[:, None, :]
        sd_r, n_r = sdf_torus_z(sensor_pos, center, cfg.valve_ring_radius,
                                cfg.valve_tube_radius)
        sd_r = sd_r - rs
        force = _accumulate(force, sd_r, n_r, 1.0, kc)
        ped_center = scene.valve_center * np.array([1.0, 1.0, 0.5])
        sd_c, n_c = sdf_cylinder(sensor_pos - ped_center[:, None, :],
                                 cfg.pedestal_radius, scene.valve_center[:, None, 2] / 2.0)
        force = _accumulate(force, sd_c - rs, n_c, 1.0, kc)
        touching = sd_r < 0.0
        target_normal = np.where(touching[..., None], n_r, 0.0)

    magnitude = np.sqrt(np.sum(force * force, axis=-1))
    return ContactBundle(force=force, magnitude=magnitude,
                         touching_target=touching, target_normal=target_normal,
                         sensor_pos=sensor_pos.copy(),
                         tip_mask=layout.group_mask("fingertip"))


# ---------------------------------------------------------------------------
# coupling
# ---------------------------------------------------------------------------


def _opposing_grip(bundle: ContactBundle, min_dot: float) -> Array:
    """True per env when >= 2 touching sensors have opposing target normals."""
    touch = bundle.touching_target
    n = bundle.target_normal
    pair_dot = np.sum(n[:, :, None, :] * n[:, None, :, :], axis=-1)
    valid = touch[:, :, None] & touch[:, None, :]
    eye = np.eye(N_SENSORS, dtype=bool)
    valid = valid & ~eye
    worst = np.where(valid, pair_dot, np.inf).min(axis=(1, 2))
    return (touch.sum(axis=1) >= 2) & (worst < min_dot)


def _yaw_of(quat: Array) -> Array:
    """Heading component of a quaternion (rotation of +x about z)."""
    fwd = quat_rotate(quat, np.broadcast_to(np.array([1.0, 0.0, 0.0]), quat.shape[:-1] + (3,)))
    return np.arctan2(fwd[..., 1], fwd[..., 0])


def step_scene(scene: SceneState, palm_before: tuple[Array, Array],
               palm_after: tuple[Array, Array], bundle: ContactBundle,
               sensor_pos_after: Array, cap_fraction: float = 1.0) -> SceneState:
    """Advance the quasi-static world by one physics sub-iteration.

    palm_before/palm_after are (position, quaternion) pairs; bundle holds the
    contacts detected at the pre-step frames; sensor_pos_after are the sensor
    positions after the robot moved. cap_fraction scales the per-control-step
    actuation caps when a control step is split into several sub-iterations.
    """
    cfg = scene.cfg
    out = scene.copy()
    if scene.task == "grasp":
        pb_pos, pb_quat = palm_before
        pa_pos, pa_quat = palm_after
        obj_contacts = bundle.touching_target.sum(axis=1)
        grip = _opposing_grip(bundle, cfg.attach_normal_dot)
        newly_attached = (~scene.attached) & grip
        # existing attachments survive while >= 2 contacts persist, with a few
        # sub-iterations of grace before the object drops
        lost = scene.attached & (obj_contacts < 2)
        out.loose_count = np.where(lost, scene.loose_count + 1, 0)
        dropping = scene.attached & (out.loose_count > cfg.detach_hold)

        attached_now = (scene.attached | newly_attached) & ~dropping
        # capture palm-relative pose at attach time (post-move palm)
        inv_pa = quat_conj(pa_quat)
        rel_pos_new = quat_rotate(inv_pa, scene.obj_pos - pa_pos)
        rel_quat_new = quat_mul(inv_pa, scene.obj_quat)
        out.attach_rel_pos = np.where(newly_attached[:, None], rel_pos_new,
                                      scene.attach_rel_pos)
        out.attach_rel_quat = np.where(newly_attached[:, None], rel_quat_new,
                                       scene.attach_rel_quat)
        # attached objects ride the palm
        carried_pos = pa_pos + quat_rotate(pa_quat, out.attach_rel_pos)
        carried_quat = quat_mul(pa_quat, out.attach_rel_quat)
        out.obj_pos = np.where(attached_now[:, None], carried_pos, scene.obj_pos)
        out.obj_quat = np.where(attached_now[:, None], carried_quat, scene.obj_quat)
        # dropped objects settle flat on the table, keeping only their yaw;
        # off the table edge they fall out of play
        if dropping.any():
            yaw = _yaw_of(scene.obj_quat)
            on_table = ((np.abs(scene.obj_pos[:, 0]) <= cfg.table_half_x)
                        & (scene.obj_pos[:, 1] >= cfg.table_y_min)
                        & (scene.obj_pos[:, 1] <= cfg.table_y_max))
            rest_pos = scene.obj_pos.copy()
            rest_pos[:, 2] = np.where(on_table, scene.rest_z, -0.6)
            out.obj_pos = np.where(dropping[:, None], rest_pos, out.obj_pos)
            out.obj_quat = np.where(dropping[:, None], yaw_quat(yaw), out.obj_quat)
        out.attached = attached_now
        out.loose_count = np.where(attached_now, out.loose_count, 0)
    elif scene.task == "door":
        handle_touch = bundle.touching_target
        n_touch = handle_touch.sum(axis=1)
        counts = np.maximum(n_touch, 1)[:, None]
        centroid_before = (bundle.sensor_pos * handle_touch[..., None]).sum(axis=1) / counts
        centroid_after = (sensor_pos_after * handle_touch[..., None]).sum(axis=1) / counts
        hub = handle_hub(scene)
        axis = handle_axis(scene)
        dphi = rotation_angle_about_axis(centroid_before, centroid_after, hub, axis)
        cap = cfg.handle_cap * cap_fraction
        dphi = np.clip(dphi, -cap, cap) * (n_touch >= 2)
        out.handle_angle = np.clip(scene.handle_angle + dphi, 0.0, cfg.handle_range)
        # pulling the door: palm displacement projected on the opening arc,
        # transmitted only while holding the handle after the latch released.
        # The gate reads the flag from before this step's phi update, matching
        # the crossing-step convention of the reward indicators.
        pb_pos, _ = palm_before
        pa_pos, _ = palm_after
        hinge = door_hinge(scene)
        arm = hub - hinge
        radius = np.linalg.norm(arm, axis=-1)
        tangent = np.cross(np.broadcast_to(Z_AXIS, arm.shape), arm)
        tangent = _safe_unit(tangent, np.broadcast_to(Z_AXIS, arm.shape))
        dpsi = np.sum((pa_pos - pb_pos) * tangent, axis=-1) / np.maximum(radius, 1e-9)
        dcap = cfg.door_cap * cap_fraction
        dpsi = np.clip(dpsi, -dcap, dcap) * (scene.unlatched & (n_touch >= 1))
        out.unlatched = scene.unlatched | (out.handle_angle > ROTATED_ANGLE)
        out.door_angle = np.clip(scene.door_angle + dpsi, 0.0, cfg.door_range)
    else:
        rim_touch = bundle.touching_target & bundle.tip_mask
        n_touch = rim_touch.sum(axis=1)
        axis = np.broadcast_to(Z_AXIS, (scene.batch, 3))
        swept = rotation_angle_about_axis(
            bundle.sensor_pos, sensor_pos_after,
            scene.valve_center[:, None, :], axis[:, None, :])
        counts = np.maximum(n_touch, 1)
        mean_sweep = (swept * rim_touch).sum(axis=1) / counts
        # clockwise seen from above is negative about +z; theta counts it positive
        dtheta = -mean_sweep * (n_touch >= 1)
        cap = cfg.valve_cap * cap_fraction
        dtheta = np.clip(dtheta, -cap, cap)
        proposed = scene.valve_angle + dtheta
        floor = scene.valve_angle_max - cfg.valve_slack
        out.valve_angle = np.maximum(proposed, np.maximum(floor, 0.0))
        out.valve_angle_max = np.maximum(scene.valve_angle_max, out.valve_angle)
    return out


# ---------------------------------------------------------------------------
# task quantities
# ---------------------------------------------------------------------------


def object_height(scene: SceneState) -> Array:
    """Height of the grasp object's center above its resting height."""
    return np.maximum(scene.obj_pos[:, 2] - scene.rest_z, 0.0)


def target_distances(scene: SceneState, tip_pos: Array) -> Array:
    """Per-fingertip reach distances (B, 4): to the target surface for grasp
    and door, to the valve center for valve."""
    if scene.task == "grasp":
        sd, _ = object_sdf(tip_pos, scene.obj_pos[:, None, :],
                           scene.obj_quat[:, None, :], scene.obj_shape[:, None],
                           scene.obj_dims[:, None, :])
        return np.maximum(sd, 0.0)
    if scene.task == "door":
        local, _ = _door_local(scene, tip_pos)
        cfg = scene.cfg
        hub0 = scene.door_center + np.stack([
            np.full(scene.batch, -cfg.handle_offset_x),
            np.full(scene.batch, -cfg.handle_standoff),
            np.full(scene.batch, cfg.handle_height)], axis=-1)
        phi = scene.handle_angle
        d0 = np.stack([-np.cos(phi), np.zeros_like(phi), -np.sin(phi)], axis=-1)
        tip0 = hub0 + cfg.handle_length * d0
        sd, _ = sdf_capsule(local, hub0[:, None, :], tip0[:, None, :],
                            cfg.handle_radius)
        return np.maximum(sd, 0.0)
    delta = tip_pos - scene.valve_center[:, None, :]
    return np.linalg.norm(delta, axis=-1)


def goal_distance(scene: SceneState) -> Array:
    """Object-to-goal distance; zero for tasks without a placement goal."""
    if scene.task != "grasp":
        return np.zeros(scene.batch)
    return np.linalg.norm(scene.obj_pos - scene.goal, axis=-1)


def task_success(scene: SceneState) -> Array:
    """Vector of per-env success flags."""
    if scene.task == "grasp":
        return scene.attached & (goal_distance(scene) < scene.cfg.goal_tolerance)
    if scene.task == "door":
        return scene.door_angle >= OPENED_ANGLE
    return scene.valve_angle >= VALVE_SUCCESS_ANGLE


def target_pose(scene: SceneState) -> Array:
    """Privileged 7-D pose of the actuated body (position + quaternion)."""
    if scene.task == "grasp":
        return np.concatenate([scene.obj_pos, scene.obj_quat], axis=-1)
    if scene.task == "door":
        hub = handle_hub(scene)
        swing = yaw_quat(scene.door_angle)
        return np.concatenate([hub, swing], axis=-1)
    return np.concatenate([scene.valve_center, yaw_quat(scene.valve_angle)], axis=-1)


def physical_params(scene: SceneState) -> Array:
    """Privileged 4-D task parameters (dimensions / articulation state)."""
    if scene.task == "grasp":
        return np.concatenate([scene.obj_dims,
                               scene.obj_shape[:, None].astype(np.float64)], axis=-1)
    if scene.task == "door":
        cfg = scene.cfg
        return np.stack([scene.handle_angle, scene.door_angle,
                         np.full(scene.batch, cfg.handle_length),
                         np.full(scene.batch, cfg.panel_half_width)], axis=-1)
    cfg = scene.cfg
    return np.stack([scene.valve_angle,
                     np.full(scene.batch, cfg.valve_ring_radius),
                     np.full(scene.batch, cfg.valve_tube_radius),
                     np.full(scene.batch, cfg.valve_height)], axis=-1)
