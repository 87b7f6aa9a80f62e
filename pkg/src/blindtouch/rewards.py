"""Progress-latched reward decomposition.

Every dense term has the form max(best_so_far - current, 0) (distances) or
max(current - best_so_far, 0) (angles), so oscillating back and forth earns
nothing: only new progress pays.  Phase transitions (object picked, handle
rotated) latch an indicator that switches which terms are active and pay a
one-shot bonus on the crossing step.

Convention for the crossing step: gated terms are evaluated with the
indicator values from *before* this step, then the indicators latch.  The
step that crosses a threshold therefore still earns its pre-latch progress
term plus the bonus.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .scene import OPENED_ANGLE, PICK_HEIGHT, ROTATED_ANGLE, TASKS, VALVE_SUCCESS_ANGLE

Array = np.ndarray

# bit positions for the bonuses-paid bitmask in decomposition logs
BONUS_PICKED = 1
BONUS_ROTATED = 2
BONUS_OPENED = 4
BONUS_SUCCESS = 8

DECOMP_HEADER = "step,r_reach,r_execute,penalty,picked,rotated,bonuses_paid_bitmask"


@dataclass(frozen=True)
class RewardWeights:
    alpha_reach: float = 1.0
    alpha_pick: float = 5.0
    alpha_goal: float = 10.0
    alpha_rot: float = 5.0
    alpha_open: float = 10.0
    r_picked: float = 50.0
    r_rotated: float = 50.0
    r_opened: float = 200.0
    r_success: float = 200.0
    beta: float = 0.003

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"reward weight {f.name} must be >= 0, got {v!r}")


@dataclass
class ProgressTracker:
    """Per-episode best-so-far quantities and latched indicators, batched."""

    d_closest: Array        # (B, 4) per-fingertip closest distance achieved
    d_goal_closest: Array   # (B,) closest object-to-goal distance once picked
    phi_max: Array          # (B,)
    psi_max: Array          # (B,)
    theta_max: Array        # (B,)
    picked: Array           # (B,) bool
    rotated: Array          # (B,) bool
    paid_picked: Array      # (B,) bool, one-shot bonus ledger
    paid_rotated: Array
    paid_opened: Array
    paid_success: Array

    @classmethod
    def init(cls, tip_distances: Array, goal_dist: Array | None = None) -> "ProgressTracker":
        d = np.asarray(tip_distances, dtype=float)
        if d.ndim != 2 or d.shape[1] != 4:
            raise ConfigError(f"tip_distances must be (B, 4), got {d.shape}")
        b = d.shape[0]
        if goal_dist is None:
            goal_dist = np.zeros(b)
        g = np.asarray(goal_dist, dtype=float)
        zeros = lambda: np.zeros(b)
        flags = lambda: np.zeros(b, dtype=bool)
        return cls(d.copy(), g.copy(), zeros(), zeros(), zeros(),
                   flags(), flags(), flags(), flags(), flags(), flags())

    @property
    def batch(self) -> int:
        return self.d_closest.shape[0]

    def copy(self) -> "ProgressTracker":
        return ProgressTracker(**{f.name: getattr(self, f.name).copy()
                                  for f in dataclasses.fields(self)})

    def reset_where(self, mask: Array, tip_distances: Array,
                    goal_dist: Array | None = None) -> None:
        """Re-initialize the rows where mask is set (per-env episode reset)."""
        mask = np.asarray(mask, dtype=bool)
        self.d_closest[mask] = tip_distances[mask]
        if goal_dist is not None:
            self.d_goal_closest[mask] = goal_dist[mask]
        else:
            self.d_goal_closest[mask] = 0.0
        for name in ("phi_max", "psi_max", "theta_max"):
            getattr(self, name)[mask] = 0.0
        for name in ("picked", "rotated", "paid_picked", "paid_rotated",
                     "paid_opened", "paid_success"):
            getattr(self, name)[mask] = False


def reach_reward(tracker: ProgressTracker, d: Array,
                 alpha_reach: float) -> tuple[Array, ProgressTracker]:
    """Pay for each fingertip getting closer to the target than ever before."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("fingertip distances must be non-negative")
    out = tracker.copy()
    r = alpha_reach * np.maximum(tracker.d_closest - d, 0.0).sum(axis=1)
    out.d_closest = np.minimum(tracker.d_closest, d)
    return r, out


def grasp_execute_reward(tracker: ProgressTracker, h_obj: Array, d_goal: Array,
                         weights: RewardWeights) -> tuple[Array, ProgressTracker]:
    h_obj = np.asarray(h_obj, dtype=float)
    d_goal = np.asarray(d_goal, dtype=float)
    out = tracker.copy()
    was_picked = tracker.picked
    height_term = ~was_picked * weights.alpha_pick * h_obj
    goal_term = was_picked * weights.alpha_goal * np.maximum(
        tracker.d_goal_closest - d_goal, 0.0)
    now_picked = was_picked | (h_obj > PICK_HEIGHT)
    bonus = (now_picked & ~tracker.paid_picked) * weights.r_picked
    out.picked = now_picked
    out.paid_picked = tracker.paid_picked | now_picked
    # goal baseline tracks from the pick moment onward
    out.d_goal_closest = np.where(
        now_picked, np.minimum(tracker.d_goal_closest, d_goal), tracker.d_goal_closest)
    return height_term + goal_term + bonus, out


def door_execute_reward(tracker: ProgressTracker, phi: Array, psi: Array,
                        weights: RewardWeights) -> tuple[Array, ProgressTracker]:
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    out = tracker.copy()
    was_rotated = tracker.rotated
    rot_term = ~was_rotated * weights.alpha_rot * np.maximum(phi - tracker.phi_max, 0.0)
    open_term = was_rotated * weights.alpha_open * np.maximum(psi - tracker.psi_max, 0.0)
    now_rotated = was_rotated | (phi > ROTATED_ANGLE)
    opened = psi > OPENED_ANGLE
    bonus = ((now_rotated & ~tracker.paid_rotated) * weights.r_rotated
             + (opened & ~tracker.paid_opened) * weights.r_opened)
    out.rotated = now_rotated
    out.paid_rotated = tracker.paid_rotated | now_rotated
    out.paid_opened = tracker.paid_opened | opened
    out.phi_max = np.maximum(tracker.phi_max, phi)
    out.psi_max = np.maximum(tracker.psi_max, psi)
    return rot_term + open_term + bonus, out


def valve_execute_reward(tracker: ProgressTracker, theta: Array,
                         weights: RewardWeights) -> tuple[Array, ProgressTracker]:
    theta = np.asarray(theta, dtype=float)
    out = tracker.copy()
    prog = weights.alpha_rot * np.maximum(theta - tracker.theta_max, 0.0)
    success = theta > VALVE_SUCCESS_ANGLE
    bonus = (success & ~tracker.paid_success) * weights.r_success
    out.theta_max = np.maximum(tracker.theta_max, theta)
    out.paid_success = tracker.paid_success | success
    return prog + bonus, out


def velocity_penalty(qdot: Array, beta: float) -> Array:
    qdot = np.asarray(qdot, dtype=float)
    if not np.all(np.isfinite(qdot)):
        raise ValueError("qdot must be finite")
    return -beta * np.abs(qdot).sum(axis=-1)


@dataclass
class StepQuantities:
    """Everything the reward needs from one control step, batched (B, ...)."""

    tip_distances: Array            # (B, 4) fingertip to target surface/center
    qdot: Array                     # (B, J)
    h_obj: Array | None = None      # grasp
    goal_dist: Array | None = None  # grasp
    phi: Array | None = None        # door handle angle
    psi: Array | None = None        # door swing angle
    theta: Array | None = None      # valve angle


@dataclass
class RewardBreakdown:
    r_reach: Array
    r_execute: Array
    penalty: Array
    bonus_mask: Array  # (B,) int, BONUS_* bits paid this step

    @property
    def total(self) -> Array:
        return self.r_reach + self.r_execute + self.penalty


def _paid_bits(before: ProgressTracker, after: ProgressTracker) -> Array:
    mask = np.zeros(before.batch, dtype=np.int64)
    mask |= BONUS_PICKED * (after.paid_picked & ~before.paid_picked)
    mask |= BONUS_ROTATED * (after.paid_rotated & ~before.paid_rotated)
    mask |= BONUS_OPENED * (after.paid_opened & ~before.paid_opened)
    mask |= BONUS_SUCCESS * (after.paid_success & ~before.paid_success)
    return mask


def total_reward(task: str, tracker: ProgressTracker, quantities: StepQuantities,
                 weights: RewardWeights) -> tuple[Array, ProgressTracker, RewardBreakdown]:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    q = quantities
    r_reach, mid = reach_reward(tracker, q.tip_distances, weights.alpha_reach)
    if task == "grasp":
        if q.h_obj is None or q.goal_dist is None:
            raise ConfigError("grasp reward needs h_obj and goal_dist")
        r_exec, out = grasp_execute_reward(mid, q.h_obj, q.goal_dist, weights)
    elif task == "door":
        if q.phi is None or q.psi is None:
            raise ConfigError("door reward needs phi and psi")
        r_exec, out = door_execute_reward(mid, q.phi, q.psi, weights)
    else:
        if q.theta is None:
            raise ConfigError("valve reward needs theta")
        r_exec, out = valve_execute_reward(mid, q.theta, weights)
    penalty = velocity_penalty(q.qdot, weights.beta)
    breakdown = RewardBreakdown(r_reach, r_exec, penalty, _paid_bits(tracker, out))
    return breakdown.total, out, breakdown


# ---------------------------------------------------------------------------
# decomposition log (single environment, CSV)
# ---------------------------------------------------------------------------


class DecompositionLog:
    """Per-step reward components of one environment, for debugging and replay."""

    def __init__(self, env_index: int = 0):
        self.env_index = env_index
        self.rows: list[tuple] = []

    def append(self, step: int, breakdown: RewardBreakdown,
               tracker: ProgressTracker) -> None:
        i = self.env_index
        self.rows.append((step,
                          float(breakdown.r_reach[i]),
                          float(breakdown.r_execute[i]),
                          float(breakdown.penalty[i]),
                          int(tracker.picked[i]),
                          int(tracker.rotated[i]),
                          int(breakdown.bonus_mask[i])))

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(DECOMP_HEADER + "\n")
            for row in self.rows:
                step, rr, re_, pen, pk, rot, bm = row
                fh.write(f"{step},{rr:.17g},{re_:.17g},{pen:.17g},{pk},{rot},{bm}\n")


def read_decomposition_csv(path) -> list[tuple]:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != DECOMP_HEADER:
            raise ConfigError(f"bad decomposition header: {header!r}")
        rows = []
        for line in fh:
            step, rr, re_, pen, pk, rot, bm = line.strip().split(",")
            rows.append((int(step), float(rr), float(re_), float(pen),
                         int(pk), int(rot), int(bm)))
    return rows
