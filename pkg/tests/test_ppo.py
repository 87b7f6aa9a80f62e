"""PPO tests: GAE vs brute force, clip quadrants, lr band, bandit training."""

from types import SimpleNamespace

import numpy as np
import pytest

from blindtouch.errors import ConfigError, UsageError
from blindtouch.nets import mlp_forward
from blindtouch.ppo import (
    PPOConfig,
    RunningMeanStd,
    adapt_lr,
    compute_gae,
    load_policy,
    normalize_advantages,
    ppo_policy_loss,
    ppo_policy_loss_grad,
    save_policy,
    train,
    value_loss,
    value_loss_grad,
)


def gae_oracle(rewards, values, bootstrap, dones, gamma, lam):
    """O(T^2) per-env expansion of the GAE sum, stopping at episode ends."""
    t_len, b = rewards.shape
    v_ext = np.vstack([values, bootstrap[None, :]])
    adv = np.zeros((t_len, b))
    for i in range(b):
        for t in range(t_len):
            acc, coef = 0.0, 1.0
            for k in range(t, t_len):
                delta = (rewards[k, i]
                         + gamma * v_ext[k + 1, i] * (1.0 - dones[k, i])
                         - values[k, i])
                acc += coef * delta
                if dones[k, i]:
                    break
                coef *= gamma * lam
            adv[t, i] = acc
    return adv


class BanditEnv:
    """One-step episodes, reward -(a - c)^2: convex with known optimum."""

    def __init__(self, batch, target):
        self.batch = batch
        self.c = np.asarray(target, dtype=float)
        self.policy_dim = 4
        self.privileged_dim = 4
        self.action_dim = len(self.c)
        self._zero = np.zeros((batch, 4))

    def reset(self, seed):
        return self._zero, self._zero

    def step(self, action):
        r = -np.sum((action - self.c) ** 2, axis=1)
        done = np.ones(self.batch, dtype=bool)
        status = SimpleNamespace(t=np.ones(self.batch, dtype=int),
                                 terminated=done,
                                 cause=np.full(self.batch, 2))
        return SimpleNamespace(policy_obs=self._zero, privileged_obs=self._zero,
                               reward=r, done=done, status=status, breakdown=None)


# ---------------------------------------------------------------------------
# GAE
# ---------------------------------------------------------------------------


def test_gae_single_terminal_step():
    adv, ret = compute_gae(np.array([[1.5]]), np.array([[0.4]]),
                           np.array([9.0]), np.array([[1.0]]), 0.99, 0.95)
    assert adv[0, 0] == pytest.approx(1.5 - 0.4)  # bootstrap ignored at done
    assert ret[0, 0] == pytest.approx(1.5)


def test_gae_lambda_zero_is_td_residual():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    boot = rng.normal(size=3)
    d = (rng.random((6, 3)) < 0.3).astype(float)
    adv, _ = compute_gae(r, v, boot, d, 0.99, 0.0)
    v_ext = np.vstack([v, boot[None, :]])
    delta = r + 0.99 * v_ext[1:] * (1 - d) - v
    np.testing.assert_allclose(adv, delta, atol=1e-12)


def test_gae_matches_brute_force_oracle():
    rng = np.random.default_rng(7)
    for trial in range(300):
        t_len = int(rng.integers(1, 65))
        b = int(rng.integers(1, 4))
        r = rng.normal(size=(t_len, b))
        v = rng.normal(size=(t_len, b))
        boot = rng.normal(size=b)
        d = (rng.random((t_len, b)) < 0.15).astype(float)
        gamma = rng.uniform(0.9, 1.0)
        lam = rng.uniform(0.8, 1.0)
        adv, ret = compute_gae(r, v, boot, d, gamma, lam)
        np.testing.assert_allclose(adv, gae_oracle(r, v, boot, d, gamma, lam),
                                   atol=1e-10)
        np.testing.assert_allclose(ret, adv + v, atol=1e-12)


def test_gae_shape_mismatch():
    with pytest.raises(UsageError):
        compute_gae(np.zeros((4, 2)), np.zeros((5, 2)), np.zeros(2),
                    np.zeros((4, 2)), 0.99, 0.95)


# ---------------------------------------------------------------------------
# clipped surrogate
# ---------------------------------------------------------------------------


def test_policy_loss_on_policy_identity():
    logp = np.array([-1.3, -0.2, -2.0])
    adv = np.array([0.5, -1.0, 2.0])
    assert ppo_policy_loss(logp, logp, adv, 0.2) == pytest.approx(-adv.mean())


def test_policy_loss_clips_positive_advantage():
    # ratio 2 with A > 0 clips at 1.2
    lp_new, lp_old = np.array([np.log(2.0)]), np.array([0.0])
    assert ppo_policy_loss(lp_new, lp_old, np.array([1.0]), 0.2) == pytest.approx(-1.2)


def test_policy_loss_clips_negative_advantage():
    # ratio 0.5 with A < 0: min(-0.5, -0.8) picks the clipped -0.8 term
    lp_new, lp_old = np.array([np.log(0.5)]), np.array([0.0])
    assert ppo_policy_loss(lp_new, lp_old, np.array([-1.0]), 0.2) == pytest.approx(0.8)


def test_policy_loss_quadrant_grid_oracle():
    eps = 0.2
    for ratio in (0.5, 0.79, 0.8, 1.0, 1.2, 1.21, 2.0):
        for adv in (-2.0, -0.5, 0.5, 2.0):
            lp_new = np.array([np.log(ratio)])
            got = ppo_policy_loss(lp_new, np.array([0.0]), np.array([adv]), eps)
            clipped = min(max(ratio, 1 - eps), 1 + eps)
            want = -min(ratio * adv, clipped * adv)
            assert got == pytest.approx(want, rel=1e-12)


def test_policy_grad_dead_zone_and_fd():
    eps, h = 0.2, 1e-7
    for ratio, adv in [(2.0, 1.0), (0.5, -1.0), (1.0, 1.0), (0.9, -0.3),
                       (1.1, 0.7), (0.5, 1.0), (2.0, -1.0)]:
        lp = np.array([np.log(ratio)])
        old = np.array([0.0])
        a = np.array([adv])
        g = ppo_policy_loss_grad(lp, old, a, eps)[0]
        fd = (ppo_policy_loss(lp + h, old, a, eps)
              - ppo_policy_loss(lp - h, old, a, eps)) / (2 * h)
        if (adv > 0 and ratio > 1 + eps) or (adv < 0 and ratio < 1 - eps):
            assert g == 0.0 and abs(fd) < 1e-9  # favored-side dead zone
        else:
            assert g == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_value_loss_cases():
    r = np.array([1.0, 2.0, -0.5])
    assert value_loss(r, r) == 0.0
    assert value_loss(r + 0.3, r) == pytest.approx(0.09)
    rng = np.random.default_rng(1)
    v, ret = rng.normal(size=50), rng.normal(size=50)
    assert value_loss(v, ret) == pytest.approx(
        sum((a - b) ** 2 for a, b in zip(v, ret)) / 50, rel=1e-12)
    np.testing.assert_allclose(value_loss_grad(v, ret), 2 * (v - ret) / 50,
                               rtol=1e-12)


def test_advantage_normalization():
    rng = np.random.default_rng(2)
    a = normalize_advantages(rng.normal(3.0, 5.0, 256))
    assert abs(a.mean()) < 1e-6
    assert abs(a.std() - 1.0) < 1e-6


# ---------------------------------------------------------------------------
# learning-rate band
# ---------------------------------------------------------------------------


def test_adapt_lr_band():
    th = 0.016
    assert adapt_lr(3e-4, 0.016, th) == 3e-4            # inside band
    assert adapt_lr(3e-4, 0.05, th) == pytest.approx(3e-4 / 1.5)
    assert adapt_lr(3e-4, 0.001, th) == pytest.approx(3e-4 * 1.5)
    assert adapt_lr(9e-3, 0.001, th, (1e-6, 1e-2)) == 1e-2   # clamp high
    assert adapt_lr(1.2e-6, 0.5, th, (1e-6, 1e-2)) == 1e-6   # clamp low
    assert adapt_lr(3e-4, 0.032, th) == 3e-4            # boundary: not > 2*th
    assert adapt_lr(3e-4, 0.008, th) == 3e-4            # boundary: not < th/2


def test_ppo_config_validation():
    with pytest.raises(ConfigError):
        PPOConfig(clip_eps=0.0)
    with pytest.raises(ConfigError):
        PPOConfig(gamma=1.0001)
    with pytest.raises(ConfigError):
        PPOConfig(kl_threshold=0.0)


# ---------------------------------------------------------------------------
# running normalizer
# ---------------------------------------------------------------------------


def test_running_stats_match_numpy():
    rng = np.random.default_rng(3)
    data = rng.normal(2.0, 3.0, (1000, 5))
    rms = RunningMeanStd(5)
    for chunk in np.array_split(data, 7):
        rms.update(chunk)
    np.testing.assert_allclose(rms.mean, data.mean(axis=0), atol=1e-8)
    np.testing.assert_allclose(rms.var, data.var(axis=0), atol=1e-6)


def test_normalize_clips():
    rms = RunningMeanStd(2, clip=5.0)
    rms.update(np.random.default_rng(0).normal(0, 1, (100, 2)))
    z = rms.normalize(np.array([[1e6, -1e6]]))
    np.testing.assert_array_equal(z, [[5.0, -5.0]])


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


QUICK = PPOConfig(horizon=8, epochs=4, minibatches=2, hidden=(32, 32),
                  lr=1e-3, total_steps=8 * 64 * 60)


def test_zero_budget_returns_initial_state():
    env = BanditEnv(8, [0.5, -0.5])
    cfg = PPOConfig(horizon=4, hidden=(16,), total_steps=0)
    out = train(cfg, env, seed=0)
    assert out.updates == 0 and out.metrics == [] and out.env_steps == 0
    assert out.actor.log_std is not None


def test_bandit_converges():
    target = np.array([0.3, -0.4, 0.5])
    env = BanditEnv(64, target)
    out = train(QUICK, env, seed=1)
    assert out.updates <= 200
    mean, _ = mlp_forward(out.actor, out.norm_p.normalize(np.zeros((1, 4))))
    assert np.all(np.abs(mean[0] - target) < 0.1)
    # metrics stream carries the improving return
    assert out.metrics[-1]["mean_return"] > out.metrics[0]["mean_return"]


def test_training_deterministic():
    env = BanditEnv(32, [0.2, 0.1])
    cfg = PPOConfig(horizon=4, epochs=2, minibatches=2, hidden=(16,),
                    lr=1e-3, total_steps=4 * 32 * 5)
    a = train(cfg, env, seed=9)
    b = train(cfg, BanditEnv(32, [0.2, 0.1]), seed=9)
    assert a.metrics == b.metrics
    for wa, wb in zip(a.actor.weights, b.actor.weights):
        np.testing.assert_array_equal(wa, wb)


def test_value_gradients_never_touch_actor_and_vice_versa():
    env = BanditEnv(16, [0.5])
    cfg = PPOConfig(horizon=4, epochs=1, minibatches=1, hidden=(8,),
                    value_coef=0.0, total_steps=4 * 16)
    out = train(cfg, env, seed=4)
    # zero value coefficient => critic kept its initialization
    rng = np.random.default_rng(4)
    from blindtouch.nets import init_mlp
    actor0 = init_mlp((4, 8, 1), rng, with_log_std=True)
    critic0 = init_mlp((4, 8, 1), rng, output_gain=1.0)
    for got, init in zip(out.critic.weights, critic0.weights):
        np.testing.assert_array_equal(got, init)
    for got, init in zip(out.critic.biases, critic0.biases):
        np.testing.assert_array_equal(got, init)
    # while the actor moved (constant zero obs: gradients reach biases only)
    assert any(not np.array_equal(got, init)
               for got, init in zip(out.actor.biases, actor0.biases))


def test_policy_checkpoint_roundtrip(tmp_path):
    env = BanditEnv(16, [0.1, 0.2])
    cfg = PPOConfig(horizon=4, epochs=1, minibatches=1, hidden=(8,),
                    total_steps=4 * 16 * 2)
    out = train(cfg, env, seed=5)
    path = tmp_path / "policy.ckpt"
    save_policy(path, out, {"task": "bandit"})
    loaded, meta = load_policy(path)
    assert meta["task"] == "bandit"
    for wa, wb in zip(out.actor.weights, loaded.actor.weights):
        np.testing.assert_array_equal(wa, wb)
    np.testing.assert_array_equal(out.actor.log_std, loaded.actor.log_std)
    np.testing.assert_array_equal(out.norm_p.mean, loaded.norm_p.mean)
    assert out.norm_p.count == loaded.norm_p.count
    # frozen policies act identically
    x = np.random.default_rng(0).normal(0, 1, (3, 4))
    np.testing.assert_array_equal(out.policy.act(x), loaded.policy.act(x))


def test_metrics_stream_file(tmp_path):
    import json
    env = BanditEnv(16, [0.3])
    cfg = PPOConfig(horizon=4, epochs=1, minibatches=1, hidden=(8,),
                    total_steps=4 * 16 * 3)
    path = tmp_path / "metrics.jsonl"
    out = train(cfg, env, seed=6, metrics_path=path)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(lines) == out.updates == 3
    assert lines[0]["update"] == 1
    for key in ("env_steps", "kl", "lr", "pi_loss", "v_loss", "entropy"):
        assert key in lines[0]
