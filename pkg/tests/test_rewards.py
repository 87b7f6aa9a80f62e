"""Reward decomposition tests against scalar replay oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blindtouch.errors import ConfigError
from blindtouch.rewards import (
    BONUS_OPENED,
    BONUS_PICKED,
    BONUS_ROTATED,
    BONUS_SUCCESS,
    DecompositionLog,
    ProgressTracker,
    RewardWeights,
    StepQuantities,
    door_execute_reward,
    grasp_execute_reward,
    reach_reward,
    read_decomposition_csv,
    total_reward,
    valve_execute_reward,
    velocity_penalty,
)

W1 = RewardWeights(alpha_reach=1.0, alpha_pick=1.0, alpha_goal=1.0,
                   alpha_rot=1.0, alpha_open=1.0,
                   r_picked=10.0, r_rotated=10.0, r_opened=20.0, r_success=20.0,
                   beta=0.01)


def fresh(d=(0.5, 0.5, 0.5, 0.5), goal=0.0):
    return ProgressTracker.init(np.array([list(d)]), np.array([goal]))


# ---------------------------------------------------------------------------
# independent scalar re-implementation used as replay oracle
# ---------------------------------------------------------------------------


class ScalarOracle:
    """Plain-float single-env reward bookkeeping, written separately on purpose."""

    def __init__(self, task, d0, goal0, w):
        self.task, self.w = task, w
        self.d = [float(x) for x in d0]
        self.dg = float(goal0)
        self.phi_m = self.psi_m = self.th_m = 0.0
        self.picked = self.rotated = False
        self.paid = set()

    def step(self, d, qdot, h=0.0, dg=0.0, phi=0.0, psi=0.0, th=0.0):
        w = self.w
        r = 0.0
        for k in range(4):
            r += w.alpha_reach * max(self.d[k] - d[k], 0.0)
            self.d[k] = min(self.d[k], d[k])
        if self.task == "grasp":
            if self.picked:
                r += w.alpha_goal * max(self.dg - dg, 0.0)
            else:
                r += w.alpha_pick * h
            if h > 0.10:
                self.picked = True
            if self.picked:
                if "picked" not in self.paid:
                    r += w.r_picked
                    self.paid.add("picked")
                self.dg = min(self.dg, dg)
        elif self.task == "door":
            if self.rotated:
                r += w.alpha_open * max(psi - self.psi_m, 0.0)
            else:
                r += w.alpha_rot * max(phi - self.phi_m, 0.0)
            if phi > 1.047:
                self.rotated = True
            if self.rotated and "rotated" not in self.paid:
                r += w.r_rotated
                self.paid.add("rotated")
            if psi > 0.873 and "opened" not in self.paid:
                r += w.r_opened
                self.paid.add("opened")
            self.phi_m = max(self.phi_m, phi)
            self.psi_m = max(self.psi_m, psi)
        else:
            r += w.alpha_rot * max(th - self.th_m, 0.0)
            if th > 2.356 and "success" not in self.paid:
                r += w.r_success
                self.paid.add("success")
            self.th_m = max(self.th_m, th)
        r -= w.beta * sum(abs(v) for v in qdot)
        return r


def random_episode(task, rng, t=200):
    """Random but plausible per-step quantities for one env."""
    steps = []
    d = rng.uniform(0.3, 0.6, 4)
    h, dg, phi, psi, th = 0.0, rng.uniform(0.2, 0.4), 0.0, 0.0, 0.0
    d0, dg0 = d.copy(), dg
    for _ in range(t):
        d = np.clip(d + rng.normal(0, 0.02, 4), 0.0, None)
        h = max(h + rng.normal(0.004, 0.01), 0.0)
        dg = max(dg + rng.normal(-0.003, 0.01), 0.0)
        phi = np.clip(phi + rng.normal(0.02, 0.02), 0.0, 1.4)
        psi = np.clip(psi + rng.normal(0.015, 0.02), 0.0, 1.6)
        th = th + rng.normal(0.03, 0.05)
        qdot = rng.normal(0, 1.0, 22)
        steps.append(dict(d=d.copy(), qdot=qdot, h=h, dg=dg, phi=phi, psi=psi, th=th))
    return d0, dg0, steps


# ---------------------------------------------------------------------------
# reach
# ---------------------------------------------------------------------------


def test_reach_first_step_zero():
    tr = fresh()
    r, tr2 = reach_reward(tr, np.array([[0.5, 0.5, 0.5, 0.5]]), 1.0)
    assert r[0] == 0.0
    np.testing.assert_array_equal(tr2.d_closest, tr.d_closest)


def test_reach_single_finger_improvement():
    tr = fresh()
    r, tr2 = reach_reward(tr, np.array([[0.4, 0.5, 0.5, 0.5]]), 1.0)
    assert r[0] == pytest.approx(0.1)
    assert tr2.d_closest[0, 0] == 0.4


def test_reach_moving_away_pays_nothing():
    tr = fresh()
    r, tr2 = reach_reward(tr, np.array([[0.7, 0.9, 0.6, 0.8]]), 1.0)
    assert r[0] == 0.0
    np.testing.assert_array_equal(tr2.d_closest, tr.d_closest)


def test_reach_rejects_negative_distance():
    with pytest.raises(ValueError):
        reach_reward(fresh(), np.array([[-0.1, 0.2, 0.2, 0.2]]), 1.0)


@given(st.permutations(range(4)),
       st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4),
       st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4))
def test_reach_permutation_symmetric(perm, d0, d1):
    p = list(perm)
    tr = ProgressTracker.init(np.array([d0]))
    ra, _ = reach_reward(tr, np.array([d1]), 1.0)
    trp = ProgressTracker.init(np.array([[d0[i] for i in p]]))
    rb, _ = reach_reward(trp, np.array([[d1[i] for i in p]]), 1.0)
    assert ra[0] == pytest.approx(rb[0], abs=1e-12)


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=40))
@settings(max_examples=60)
def test_reach_telescoping_bound(seq):
    d0 = seq[0]
    tr = ProgressTracker.init(np.full((1, 4), d0))
    total = 0.0
    for v in seq[1:]:
        r, tr = reach_reward(tr, np.full((1, 4), v), 1.0)
        total += r[0]
    bound = 4 * (d0 - min(seq))
    assert total <= bound + 1e-9
    # equality when the sequence is monotone non-increasing
    mono = sorted(seq, reverse=True)
    tr = ProgressTracker.init(np.full((1, 4), mono[0]))
    total = 0.0
    for v in mono:
        r, tr = reach_reward(tr, np.full((1, 4), v), 1.0)
        total += r[0]
    assert total == pytest.approx(4 * (mono[0] - mono[-1]), abs=1e-9)


# ---------------------------------------------------------------------------
# grasp
# ---------------------------------------------------------------------------


def test_grasp_height_term_only():
    r, tr = grasp_execute_reward(fresh(), np.array([0.05]), np.array([0.3]), W1)
    assert r[0] == pytest.approx(0.05)
    assert not tr.picked[0]


def test_grasp_crossing_pays_bonus_once():
    tr = fresh(goal=0.3)
    r, tr = grasp_execute_reward(tr, np.array([0.12]), np.array([0.3]), W1)
    # crossing step: pre-latch height term + one-shot bonus
    assert r[0] == pytest.approx(0.12 + 10.0)
    assert tr.picked[0] and tr.paid_picked[0]
    r, tr = grasp_execute_reward(tr, np.array([0.15]), np.array([0.3]), W1)
    assert r[0] == 0.0  # height gated off, no goal progress, bonus spent


def test_grasp_goal_progress_example():
    w = RewardWeights(alpha_pick=7.0, alpha_goal=2.0, r_picked=0.0)
    tr = fresh(goal=0.30)
    tr.picked[:] = True
    tr.paid_picked[:] = True
    r, tr2 = grasp_execute_reward(tr, np.array([0.2]), np.array([0.22]), w)
    assert r[0] == pytest.approx(2.0 * (0.30 - 0.22))
    assert tr2.d_goal_closest[0] == pytest.approx(0.22)


def test_grasp_height_gated_after_pick():
    w = RewardWeights(alpha_pick=1000.0, r_picked=0.0)
    tr = fresh(goal=0.3)
    tr.picked[:] = True
    tr.paid_picked[:] = True
    r, _ = grasp_execute_reward(tr, np.array([0.5]), np.array([0.3]), w)
    assert r[0] == 0.0


# ---------------------------------------------------------------------------
# door
# ---------------------------------------------------------------------------


def test_door_handle_progress():
    tr = fresh()
    r, tr = door_execute_reward(tr, np.array([0.20]), np.array([0.0]), W1)
    assert r[0] == pytest.approx(0.20)
    r, tr = door_execute_reward(tr, np.array([0.35]), np.array([0.0]), W1)
    assert r[0] == pytest.approx(0.15)
    assert tr.phi_max[0] == 0.35


def test_door_rotation_latch_and_bonus():
    tr = fresh()
    tr.phi_max[:] = 1.0
    r, tr = door_execute_reward(tr, np.array([1.10]), np.array([0.0]), W1)
    assert r[0] == pytest.approx((1.10 - 1.0) + 10.0)
    assert tr.rotated[0]
    # further handle progress is gated off by the latched indicator
    r, tr = door_execute_reward(tr, np.array([1.30]), np.array([0.0]), W1)
    assert r[0] == 0.0
    assert tr.phi_max[0] == 1.30


def test_door_swing_gated_by_rotation():
    tr = fresh()
    r, tr = door_execute_reward(tr, np.array([0.2]), np.array([0.5]), W1)
    assert r[0] == pytest.approx(0.2)  # psi progress pays nothing before latch
    assert tr.psi_max[0] == 0.5
    tr.rotated[:] = True
    tr.paid_rotated[:] = True
    r, tr = door_execute_reward(tr, np.array([0.2]), np.array([0.60]), W1)
    assert r[0] == pytest.approx(0.60 - 0.5)


def test_door_swing_after_latch_example():
    tr = fresh()
    r, tr = door_execute_reward(tr, np.array([1.10]), np.array([0.0]), W1)
    r, tr = door_execute_reward(tr, np.array([1.10]), np.array([0.10]), W1)
    assert r[0] == pytest.approx(0.10)


def test_door_open_bonus_once():
    tr = fresh()
    tr.rotated[:] = True
    tr.paid_rotated[:] = True
    r, tr = door_execute_reward(tr, np.array([1.2]), np.array([0.90]), W1)
    assert r[0] == pytest.approx(0.90 + 20.0)
    r, tr = door_execute_reward(tr, np.array([1.2]), np.array([0.95]), W1)
    assert r[0] == pytest.approx(0.05)


# ---------------------------------------------------------------------------
# valve
# ---------------------------------------------------------------------------


def test_valve_progress():
    tr = fresh()
    tr.theta_max[:] = 0.5
    r, tr = valve_execute_reward(tr, np.array([0.8]), W1)
    assert r[0] == pytest.approx(0.3)


def test_valve_oscillation_pays_nothing():
    tr = fresh()
    total = 0.0
    for th in (0.8, 0.6, 0.8):
        r, tr = valve_execute_reward(tr, np.array([th]), W1)
        total += r[0]
    assert total == pytest.approx(0.8)  # only the first rise to 0.8


def test_valve_success_bonus_once():
    tr = fresh()
    tr.theta_max[:] = 2.3
    r, tr = valve_execute_reward(tr, np.array([2.40]), W1)
    assert r[0] == pytest.approx(0.10 + 20.0)
    r, tr = valve_execute_reward(tr, np.array([2.50]), W1)
    assert r[0] == pytest.approx(0.10)


# ---------------------------------------------------------------------------
# velocity penalty
# ---------------------------------------------------------------------------


def test_velocity_penalty_cases():
    assert velocity_penalty(np.zeros((1, 22)), 0.01)[0] == 0.0
    qdot = np.zeros((1, 22))
    qdot[0, :2] = [1.0, -1.0]
    assert velocity_penalty(qdot, 0.01)[0] == pytest.approx(-0.02)
    rng = np.random.default_rng(0)
    q = rng.normal(0, 2, (3, 22))
    oracle = np.array([-0.003 * sum(abs(v) for v in row) for row in q])
    np.testing.assert_allclose(velocity_penalty(q, 0.003), oracle, rtol=1e-12)


def test_velocity_penalty_rejects_nonfinite():
    q = np.zeros((1, 22))
    q[0, 3] = np.nan
    with pytest.raises(ValueError):
        velocity_penalty(q, 0.01)


# ---------------------------------------------------------------------------
# total reward
# ---------------------------------------------------------------------------


def test_total_stationary_first_step_zero():
    tr = fresh(goal=0.3)
    q = StepQuantities(np.full((1, 4), 0.5), np.zeros((1, 22)),
                       h_obj=np.zeros(1), goal_dist=np.full(1, 0.3))
    r, _, bd = total_reward("grasp", tr, q, W1)
    assert r[0] == 0.0
    assert bd.bonus_mask[0] == 0


def test_total_is_component_sum():
    tr = fresh(goal=0.3)
    q = StepQuantities(np.full((1, 4), 0.4), np.ones((1, 22)),
                       h_obj=np.full(1, 0.05), goal_dist=np.full(1, 0.3))
    r, _, bd = total_reward("grasp", tr, q, W1)
    assert bd.r_reach[0] == pytest.approx(0.4)
    assert bd.r_execute[0] == pytest.approx(0.05)
    assert bd.penalty[0] == pytest.approx(-0.22)
    assert r[0] == pytest.approx(0.4 + 0.05 - 0.22)


def test_total_rejects_missing_quantities():
    tr = fresh()
    q = StepQuantities(np.full((1, 4), 0.5), np.zeros((1, 22)))
    with pytest.raises(ConfigError):
        total_reward("door", tr, q, W1)
    with pytest.raises(ConfigError):
        total_reward("descend", tr, q, W1)


@pytest.mark.parametrize("task", ["grasp", "door", "valve"])
def test_episode_matches_scalar_oracle(task):
    rng = np.random.default_rng(hash(task) % 2**32)
    d0, dg0, steps = random_episode(task, rng)
    tr = ProgressTracker.init(d0[None, :], np.array([dg0]))
    oracle = ScalarOracle(task, d0, dg0, W1)
    for s in steps:
        q = StepQuantities(s["d"][None, :], s["qdot"][None, :],
                           h_obj=np.array([s["h"]]), goal_dist=np.array([s["dg"]]),
                           phi=np.array([s["phi"]]), psi=np.array([s["psi"]]),
                           theta=np.array([s["th"]]))
        r, tr, _ = total_reward(task, tr, q, W1)
        expect = oracle.step(s["d"], s["qdot"], s["h"], s["dg"],
                             s["phi"], s["psi"], s["th"])
        assert r[0] == pytest.approx(expect, abs=1e-12)


@pytest.mark.parametrize("task", ["grasp", "door", "valve"])
def test_decomposition_log_one_shot_bonuses(task, tmp_path):
    rng = np.random.default_rng(11)
    d0, dg0, steps = random_episode(task, rng, t=300)
    tr = ProgressTracker.init(d0[None, :], np.array([dg0]))
    log = DecompositionLog()
    for k, s in enumerate(steps):
        q = StepQuantities(s["d"][None, :], s["qdot"][None, :],
                           h_obj=np.array([s["h"]]), goal_dist=np.array([s["dg"]]),
                           phi=np.array([s["phi"]]), psi=np.array([s["psi"]]),
                           theta=np.array([s["th"]]))
        r, tr, bd = total_reward(task, tr, q, W1)
        log.append(k, bd, tr)
        assert r[0] == pytest.approx(bd.r_reach[0] + bd.r_execute[0] + bd.penalty[0])
    path = tmp_path / "decomp.csv"
    log.write(path)
    rows = read_decomposition_csv(path)
    assert len(rows) == 300
    for bit in (BONUS_PICKED, BONUS_ROTATED, BONUS_OPENED, BONUS_SUCCESS):
        assert sum(1 for row in rows if row[6] & bit) <= 1
    # the task that ran latched at least one phase (episodes drift forward)
    if task == "grasp":
        assert any(row[6] & BONUS_PICKED for row in rows)
    if task == "door":
        assert any(row[6] & BONUS_ROTATED for row in rows)
    if task == "valve":
        assert any(row[6] & BONUS_SUCCESS for row in rows)
    # indicators in the log never un-latch
    for col in (4, 5):
        vals = [row[col] for row in rows]
        assert vals == sorted(vals)


def test_decomposition_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("step,nope\n")
    with pytest.raises(ConfigError):
        read_decomposition_csv(p)


def test_batched_equals_sequential():
    rng = np.random.default_rng(3)
    b, t = 5, 50
    d0 = rng.uniform(0.3, 0.6, (b, 4))
    dg0 = rng.uniform(0.2, 0.4, b)
    seq = [dict(d=np.clip(rng.normal(0.4, 0.1, (b, 4)), 0, None),
                qdot=rng.normal(0, 1, (b, 22)),
                h=np.abs(rng.normal(0.06, 0.05, b)),
                dg=np.abs(rng.normal(0.3, 0.1, b)),
                phi=np.abs(rng.normal(0.5, 0.4, b)),
                psi=np.abs(rng.normal(0.4, 0.3, b)),
                th=rng.normal(1.0, 1.0, b)) for _ in range(t)]
    tr = ProgressTracker.init(d0, dg0)
    batch_r = []
    for s in seq:
        q = StepQuantities(s["d"], s["qdot"], h_obj=s["h"], goal_dist=s["dg"],
                           phi=s["phi"], psi=s["psi"], theta=s["th"])
        r, tr, _ = total_reward("door", tr, q, W1)
        batch_r.append(r)
    for i in range(b):
        tri = ProgressTracker.init(d0[i:i + 1], dg0[i:i + 1])
        for k, s in enumerate(seq):
            q = StepQuantities(s["d"][i:i + 1], s["qdot"][i:i + 1],
                               h_obj=s["h"][i:i + 1], goal_dist=s["dg"][i:i + 1],
                               phi=s["phi"][i:i + 1], psi=s["psi"][i:i + 1],
                               theta=s["th"][i:i + 1])
            r, tri, _ = total_reward("door", tri, q, W1)
            assert r[0] == batch_r[k][i]


def test_tracker_reset_rows():
    tr = ProgressTracker.init(np.full((2, 4), 0.5), np.array([0.3, 0.3]))
    tr.picked[:] = True
    tr.phi_max[:] = 1.0
    mask = np.array([True, False])
    tr.reset_where(mask, np.full((2, 4), 0.7), np.array([0.4, 0.4]))
    assert not tr.picked[0] and tr.picked[1]
    assert tr.phi_max[0] == 0.0 and tr.phi_max[1] == 1.0
    assert tr.d_closest[0, 0] == 0.7 and tr.d_closest[1, 0] == 0.5
    assert tr.d_goal_closest[0] == 0.4 and tr.d_goal_closest[1] == 0.3


def test_weights_reject_negative():
    with pytest.raises(ConfigError):
        RewardWeights(beta=-0.1)


@given(st.lists(st.tuples(st.floats(0, 1.4), st.floats(0, 1.6)),
                min_size=1, max_size=30))
@settings(max_examples=50)
def test_tracker_monotonicity_property(angles):
    tr = fresh()
    prev_phi, prev_psi = 0.0, 0.0
    was_rot = False
    for phi, psi in angles:
        r, tr = door_execute_reward(tr, np.array([phi]), np.array([psi]), W1)
        assert r[0] >= -1e-12
        assert tr.phi_max[0] >= prev_phi - 1e-15
        assert tr.psi_max[0] >= prev_psi - 1e-15
        assert tr.rotated[0] or not was_rot  # once true, stays true
        was_rot = tr.rotated[0]
        prev_phi, prev_psi = tr.phi_max[0], tr.psi_max[0]
