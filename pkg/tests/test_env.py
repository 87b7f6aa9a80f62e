"""Environment tests: observation layout, hiding, determinism, lifecycle."""

import numpy as np
import pytest

from blindtouch.env import (
    CAUSE_SUCCESS,
    CAUSE_TIMEOUT,
    EnvConfig,
    TouchEnv,
    TrajectoryLog,
    obs_hash,
    read_trajectory_log,
)
from blindtouch.errors import ConfigError, UsageError
from blindtouch.scene import SceneConfig
from blindtouch.tactile import wrist_ft_reading


def make_env(task="grasp", batch=1, seed=0, **kw):
    return TouchEnv(EnvConfig(task=task, batch=batch, seed=seed, **kw))


def random_actions(rng, t, batch, scale=0.3):
    return rng.uniform(-scale, scale, (t, batch, 22))


# ---------------------------------------------------------------------------
# observation layout
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("task,pdim,vdim", [
    ("grasp", 90, 129), ("door", 87, 126), ("valve", 87, 126)])
def test_observation_lengths(task, pdim, vdim):
    env = make_env(task, batch=2)
    pobs, vobs = env.reset(0)
    assert env.policy_dim == pdim and env.privileged_dim == vdim
    assert pobs.shape == (2, pdim) and vobs.shape == (2, vdim)
    assert pobs.dtype == np.float64


@pytest.mark.parametrize("task,pdim", [("grasp", 80), ("door", 77), ("valve", 77)])
def test_ft_sensor_replaces_touch_block(task, pdim):
    env = make_env(task, ft_sensor=True)
    assert env.policy_dim == pdim
    res = env.step(np.zeros((1, 22)))
    ft = res.policy_obs[:, env.obs_slices["contacts"]]
    oracle = wrist_ft_reading(env._bundle.force, env._bundle.sensor_pos,
                              env._frames.wrist_pos, env._frames.wrist_quat)
    np.testing.assert_array_equal(ft, oracle)


def test_privileged_prefix_is_policy_obs():
    env = make_env("grasp", batch=3)
    rng = np.random.default_rng(0)
    for a in random_actions(rng, 5, 3):
        res = env.step(a)
        assert np.array_equal(res.privileged_obs[:, :env.policy_dim],
                              res.policy_obs)


def test_contact_slice_is_binary():
    env = make_env("valve", batch=4, seed=3)
    rng = np.random.default_rng(1)
    seen = np.zeros(16)
    for a in random_actions(rng, 20, 4, scale=0.5):
        res = env.step(a)
        bits = res.policy_obs[:, env.obs_slices["contacts"]]
        assert np.isin(bits, (0.0, 1.0)).all()
        seen += bits.sum(axis=0)
    # the raw magnitudes do appear in the privileged block instead
    raw = res.privileged_obs[:, env.policy_dim + 23:env.policy_dim + 39]
    assert raw.shape == (4, 16)


def test_da_sensor_zeros_touch_bits():
    env = make_env("valve", batch=2, seed=3, da_sensor=True)
    rng = np.random.default_rng(1)
    for a in random_actions(rng, 15, 2, scale=0.5):
        res = env.step(a)
        assert not res.policy_obs[:, env.obs_slices["contacts"]].any()
    # physics still runs: privileged raw forces are untouched by the mask
    assert res.privileged_obs.shape == (2, env.privileged_dim)


def test_wo_pinfo_zeros_privileged_block():
    env = make_env("grasp", batch=2, wo_pinfo=True)
    rng = np.random.default_rng(2)
    for a in random_actions(rng, 10, 2):
        res = env.step(a)
        assert not res.privileged_obs[:, env.policy_dim:].any()
        assert np.array_equal(res.privileged_obs[:, :env.policy_dim],
                              res.policy_obs)


def test_indicators_mirror_tracker():
    env = make_env("grasp")
    env.tracker.picked[:] = True
    _, vobs = env._observe()
    base = env.policy_dim
    assert vobs[0, base + 7 + 6 + 4 + 4] == 1.0      # picked
    assert vobs[0, base + 7 + 6 + 4 + 4 + 1] == 0.0  # rotated


def test_task_info_is_static_config():
    cfg = SceneConfig.for_task("grasp", range_x=0.11, range_y=0.07)
    env = TouchEnv(EnvConfig(task="grasp", batch=2, seed=0, scene=cfg))
    pobs, _ = env.reset(0)
    info = pobs[:, env.obs_slices["task_info"]]
    np.testing.assert_array_equal(info[0], [cfg.goal_x, cfg.goal_y, cfg.goal_z,
                                            0.11, 0.07])
    np.testing.assert_array_equal(info[0], info[1])


# ---------------------------------------------------------------------------
# stepping and termination
# ---------------------------------------------------------------------------


def test_zero_action_is_stationary_and_rewardless():
    env = make_env("grasp")
    for _ in range(3):
        res = env.step(np.zeros((1, 22)))
        assert res.reward[0] == 0.0
        assert not env.state.qdot.any()
    np.testing.assert_array_equal(env.state.q[0], env.model.home_q)


def test_timeout_terminates():
    env = make_env("grasp", t_max=3)
    for k in range(3):
        res = env.step(np.zeros((1, 22)))
    assert res.done[0]
    assert res.status.cause[0] == CAUSE_TIMEOUT
    assert res.status.t[0] == 3


def test_auto_reset_rehomes_done_members():
    env = make_env("grasp", batch=2, t_max=2)
    env.step(np.full((2, 22), 0.2))
    res = env.step(np.full((2, 22), 0.2))
    assert res.done.all()
    # returned observation belongs to the fresh episode
    np.testing.assert_array_equal(res.policy_obs[:, :22],
                                  np.broadcast_to(env.model.home_q, (2, 22)))
    assert (env._t == 0).all()
    assert not env.tracker.picked.any()
    # velocities in the fresh obs are zero
    palm = res.policy_obs[:, env.obs_slices["palm"]]
    assert not palm[:, 7:].any()


def test_step_without_auto_reset_raises():
    env = make_env("grasp", t_max=1, auto_reset=False)
    env.step(np.zeros((1, 22)))
    with pytest.raises(UsageError):
        env.step(np.zeros((1, 22)))


def test_action_shape_checked():
    env = make_env("grasp", batch=2)
    with pytest.raises(UsageError):
        env.step(np.zeros((3, 22)))
    with pytest.raises(UsageError):
        env.step(np.zeros((2, 21)))


def test_substep_counts():
    from blindtouch.kinematics import CONTROL_DT, N_SUB_ITER, N_SUBSTEPS, SIM_DT
    assert N_SUB_ITER == 6 and N_SUBSTEPS == 2
    assert SIM_DT == pytest.approx(0.01667)
    assert CONTROL_DT == pytest.approx(0.1)


# ---------------------------------------------------------------------------
# reset semantics
# ---------------------------------------------------------------------------


def test_reset_deterministic():
    env = make_env("grasp", batch=3)
    a, av = env.reset(17)
    b, bv = env.reset(17)
    assert np.array_equal(a, b) and np.array_equal(av, bv)
    # stepping in between must not change what reset(seed) produces
    env.step(np.full((3, 22), 0.1))
    c, _ = env.reset(17)
    assert np.array_equal(a, c)


def test_reset_requires_initial_seed():
    env = make_env("grasp")
    env.reset()  # fine: constructor seeded the streams
    obs1, _ = env.reset(4)
    obs2, _ = env.reset(4)
    assert np.array_equal(obs1, obs2)


def test_resets_stay_within_placement_bounds():
    env = make_env("grasp", batch=500, seed=23)
    cfg = env.scene_cfg
    x = env.scene.obj_pos[:, 0] - cfg.center_x
    y = env.scene.obj_pos[:, 1] - cfg.center_y
    assert np.all(np.abs(x) <= cfg.range_x + 1e-12)
    assert np.all(np.abs(y) <= cfg.range_y + 1e-12)


def test_first_step_reach_term_zero_when_still():
    env = make_env("door")
    res = env.step(np.zeros((1, 22)))
    assert res.breakdown.r_reach[0] == 0.0


# ---------------------------------------------------------------------------
# vectorization equivalences
# ---------------------------------------------------------------------------


def test_batched_equals_sequential():
    seed, b, t = 10, 4, 8
    rng = np.random.default_rng(0)
    actions = random_actions(rng, t, b, scale=0.6)
    env = make_env("grasp", batch=b, seed=seed, t_max=5)
    batched = [env.step(actions[k]) for k in range(t)]
    for i in range(b):
        solo = make_env("grasp", batch=1, seed=seed + i, t_max=5)
        for k in range(t):
            res = solo.step(actions[k, i:i + 1])
            assert np.array_equal(res.policy_obs[0], batched[k].policy_obs[i])
            assert np.array_equal(res.privileged_obs[0], batched[k].privileged_obs[i])
            assert res.reward[0] == batched[k].reward[i]
            assert res.status.cause[0] == batched[k].status.cause[i]


def test_identical_seeds_identical_trajectories():
    b = 16
    env = make_env("valve", batch=b)
    env.reset(np.full(b, 7))
    rng = np.random.default_rng(5)
    for k in range(6):
        a = np.broadcast_to(rng.uniform(-0.5, 0.5, 22), (b, 22))
        res = env.step(a)
        for arr in (res.policy_obs, res.privileged_obs):
            assert np.array_equal(arr, np.broadcast_to(arr[0], arr.shape))
        assert np.array_equal(res.reward, np.full(b, res.reward[0]))


def test_blindness_until_first_contact():
    # two envs differing only in object placement: identical policy obs
    # until a touch bit fires in either one
    rng = np.random.default_rng(42)
    for pair in range(5):
        e1 = make_env("grasp", seed=100 + pair)
        e2 = make_env("grasp", seed=200 + pair)
        assert not np.array_equal(e1.scene.obj_pos, e2.scene.obj_pos)
        p1, _ = e1.reset(100 + pair)
        p2, _ = e2.reset(200 + pair)
        sl = e1.obs_slices["contacts"]
        if p1[0, sl].any() or p2[0, sl].any():
            continue  # touching already at reset: nothing to compare
        np.testing.assert_array_equal(p1, p2)
        for k in range(10):
            a = rng.uniform(-0.4, 0.4, (1, 22))
            r1, r2 = e1.step(a), e2.step(a)
            if r1.policy_obs[0, sl].any() or r2.policy_obs[0, sl].any():
                break
            np.testing.assert_array_equal(r1.policy_obs, r2.policy_obs)


# ---------------------------------------------------------------------------
# trajectory log
# ---------------------------------------------------------------------------


def test_trajectory_log_roundtrip(tmp_path):
    env = make_env("grasp", batch=2, seed=1)
    log = TrajectoryLog(env_index=1)
    rng = np.random.default_rng(3)
    hashes = []
    for k in range(5):
        a = rng.uniform(-0.2, 0.2, (2, 22))
        res = env.step(a)
        log.append(k, res.policy_obs, a, res)
        hashes.append(obs_hash(res.policy_obs[1]))
    path = tmp_path / "traj.jsonl"
    log.write(path)
    records = read_trajectory_log(path)
    assert len(records) == 5
    for k, rec in enumerate(records):
        assert rec["obs_hash"] == hashes[k]
        assert rec["cause"] in ("none", "success", "timeout", "fault")
        assert len(rec["action"]) == 22


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


def test_env_config_validation():
    with pytest.raises(ConfigError):
        EnvConfig(batch=0)
    with pytest.raises(ConfigError):
        EnvConfig(sensor_preset="Half")
    with pytest.raises(ConfigError):
        EnvConfig(task="door", scene=SceneConfig.for_task("grasp"))


def test_sensor_preset_changes_active_mask():
    tips = make_env("grasp", sensor_preset="Fingertips")
    assert tips.layout.active.sum() == 4
    none = make_env("grasp", sensor_preset="None")
    assert none.layout.active.sum() == 0
