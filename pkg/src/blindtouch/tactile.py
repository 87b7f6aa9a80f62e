"""Touch sensing chain: force magnitudes, threshold binarization, masking.

The simulator produces per-sensor net contact force vectors; this module turns
them into the 16-bit binary signal the policy consumes, applies the ablation
masks (all / fingertips / palm / none), models the wrist force-torque
surrogate, and ingests recorded 125 Hz analog streams through a first-order
low-pass filter for offline replay.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

Array = np.ndarray

N_SENSORS = 16
DEFAULT_THRESHOLD = 0.01      # N, simulation binarization threshold
LQ_THRESHOLD = 0.3            # N, low-quality sensor ablation
DEFAULT_ALPHA = 0.4           # replay low-pass smoothing factor
REPLAY_RATE_HZ = 125.0
CONTROL_RATE_HZ = 10.0

MASK_PRESETS = ("All", "Fingertips", "Palm", "None")


@dataclass(frozen=True)
class SensorLayout:
    """The 16-sensor set: names, group tags, active mask, and threshold."""

    names: tuple[str, ...]
    groups: tuple[str, ...]          # 'fingertip' | 'finger-link' | 'palm'
    active: Array                    # bool (16,)
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if len(self.names) != N_SENSORS or len(self.groups) != N_SENSORS:
            raise ConfigError(f"layout needs exactly {N_SENSORS} sensors")
        if self.groups.count("fingertip") != 4 or self.groups.count("palm") != 4:
            raise ConfigError("layout needs 4 fingertip and 4 palm sensors")
        if self.threshold <= 0.0:
            raise ConfigError("binarization threshold must be positive")
        object.__setattr__(self, "active",
                           np.asarray(self.active, dtype=bool).reshape(N_SENSORS).copy())

    @classmethod
    def from_model(cls, model, threshold: float = DEFAULT_THRESHOLD) -> "SensorLayout":
        names = tuple(model.sites[i].name for i in model.sensor_sites)
        groups = tuple(model.sensor_groups)
        return cls(names, groups, np.ones(N_SENSORS, dtype=bool), threshold)

    def group_mask(self, group: str) -> Array:
        return np.array([g == group for g in self.groups])


@dataclass
class ContactReading:
    """Per-sensor contact state for one control step (batched)."""

    force: Array          # (..., 16, 3) N, world frame
    magnitude: Array      # (..., 16) N
    binary: Array         # (..., 16) float 0/1 after threshold and mask
    step: int = 0


def contact_force_magnitude(force: Array) -> Array:
    """Euclidean norm of net contact force vectors (..., 3) -> (...,)."""
    force = np.asarray(force, dtype=np.float64)
    return np.sqrt(np.sum(force * force, axis=-1))


def binarize(magnitude, layout: SensorLayout, sensor_index: int | None = None) -> Array:
    """Threshold magnitudes into {0,1}: strictly above threshold and active.

    With sensor_index=None, magnitude is (..., 16) and the full active mask
    applies; otherwise magnitude is per-sensor scalar data.
    """
    magnitude = np.asarray(magnitude, dtype=np.float64)
    if sensor_index is None:
        if magnitude.shape[-1] != N_SENSORS:
            raise ConfigError(f"expected {N_SENSORS} magnitudes, got {magnitude.shape}")
        return ((magnitude > layout.threshold) & layout.active).astype(np.float64)
    if not 0 <= sensor_index < N_SENSORS:
        raise ConfigError(f"sensor index {sensor_index} out of range")
    on = (magnitude > layout.threshold) & bool(layout.active[sensor_index])
    return np.asarray(on, dtype=np.float64)


def make_reading(force: Array, layout: SensorLayout, step: int = 0) -> ContactReading:
    force = np.asarray(force, dtype=np.float64)
    mag = contact_force_magnitude(force)
    return ContactReading(force, mag, binarize(mag, layout), step)


def apply_sensor_mask(layout: SensorLayout, preset: str) -> SensorLayout:
    """Return a layout whose active mask matches the named preset."""
    if preset not in MASK_PRESETS:
        raise ConfigError(f"unknown sensor mask preset {preset!r}; "
                          f"expected one of {MASK_PRESETS}")
    if preset == "All":
        active = np.ones(N_SENSORS, dtype=bool)
    elif preset == "None":
        active = np.zeros(N_SENSORS, dtype=bool)
    else:
        group = "fingertip" if preset == "Fingertips" else "palm"
        active = layout.group_mask(group)
    return replace(layout, active=active)


def lowpass_filter(stream, alpha: float) -> Array:
    """First-order IIR low-pass: y_0 = alpha x_0; y_t = alpha x_t + (1-alpha) y_{t-1}.

    stream is (T,) or (T, channels); channels filter independently.
    """
    if not 0.0 < alpha <= 1.0:
        raise ConfigError("alpha must be in (0, 1]")
    x = np.asarray(stream, dtype=np.float64)
    y = np.empty_like(x)
    prev = np.zeros_like(x[0])
    for t in range(x.shape[0]):
        prev = alpha * x[t] + (1.0 - alpha) * prev
        y[t] = prev
    return y


def wrist_ft_reading(forces: Array, positions: Array, wrist_pos: Array,
                     wrist_quat: Array) -> Array:
    """Aggregate contact forces into a wrist-frame force/torque 6-vector.

    forces, positions: (..., S, 3) world-frame contact forces and application
    points; the torque arm is taken about the wrist origin. Output (..., 6)
    is [Fx, Fy, Fz, Tx, Ty, Tz] in the wrist frame.
    """
    from .kinematics import quat_conj, quat_rotate

    forces = np.asarray(forces, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64)
    f_world = forces.sum(axis=-2)
    arms = positions - np.asarray(wrist_pos, dtype=np.float64)[..., None, :]
    t_world = np.cross(arms, forces).sum(axis=-2)
    inv = quat_conj(np.asarray(wrist_quat, dtype=np.float64))
    return np.concatenate([quat_rotate(inv, f_world), quat_rotate(inv, t_world)], axis=-1)


# ---------------------------------------------------------------------------
# replay ingest: recorded analog streams -> filtered -> binarized hex masks
#
# Input CSV: optional comment lines "# key=value" (unit=N|V, rate_hz=125),
# then header "step,ch0,...,ch15", then one row per sample.
# Output CSV: "step,mask" with a 16-bit hex mask per control step.
# ---------------------------------------------------------------------------


def read_replay_csv(path) -> tuple[Array, dict[str, str]]:
    """Parse a recorded sensor stream; returns (T, 16) values and metadata."""
    meta = {"unit": "N", "rate_hz": "%g" % REPLAY_RATE_HZ}
    rows = []
    header_seen = False
    with open(path) as f:
        for raw in f:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            if not header_seen:
                cols = [c.strip() for c in line.split(",")]
                if cols[0] != "step" or len(cols) != 1 + N_SENSORS:
                    raise ConfigError(f"bad replay header: {line!r}")
                header_seen = True
                continue
            vals = line.split(",")
            if len(vals) != 1 + N_SENSORS:
                raise ConfigError(f"bad replay row: {line!r}")
            rows.append([float(v) for v in vals[1:]])
    if not header_seen:
        raise ConfigError("replay file has no header")
    return np.array(rows, dtype=np.float64).reshape(-1, N_SENSORS), meta


def binarize_stream(values: Array, layout: SensorLayout, alpha: float = DEFAULT_ALPHA,
                    sample_rate: float = REPLAY_RATE_HZ,
                    control_rate: float = CONTROL_RATE_HZ) -> list[int]:
    """Filter a (T, 16) stream and emit one 16-bit mask per control step.

    Control step k reads the filtered sample taken just before time
    (k+1)/control_rate; non-integer rate ratios decimate exactly.
    """
    filtered = lowpass_filter(values, alpha)
    n_samples = filtered.shape[0]
    stride = sample_rate / control_rate
    masks = []
    k = 0
    while True:
        idx = int(np.floor((k + 1) * stride)) - 1
        if idx >= n_samples:
            break
        bits = binarize(filtered[idx], layout)
        masks.append(int(sum(int(b) << i for i, b in enumerate(bits))))
        k += 1
    return masks


def format_mask(mask: int) -> str:
    return "0x%04x" % mask


def write_mask_csv(path, masks: list[int]) -> None:
    with open(path, "w") as f:
        f.write("step,mask\n")
        for k, m in enumerate(masks):
            f.write(f"{k},{format_mask(m)}\n")
