"""PPO trainer with an asymmetric critic.

The actor sees only the blind policy observation; the critic regresses
returns from the privileged observation.  Networks are plain numpy MLPs
(see nets) with hand-written gradients, so every update is deterministic
given the seed and fully inspectable.

Learning rate follows the banded KL rule: measured KL above twice the
threshold shrinks lr by 1.5x, below half the threshold grows it by 1.5x.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from .nets import (
    DEFAULT_HIDDEN,
    LOG_STD_MAX,
    LOG_STD_MIN,
    AdamState,
    NetworkParams,
    adam_init,
    adam_step,
    clip_grad_norm,
    diag_gaussian_kl,
    gaussian_entropy,
    gaussian_log_prob,
    init_mlp,
    load_tensors,
    mlp_backward,
    mlp_forward,
    params_from_tensors,
    params_to_tensors,
    save_tensors,
)

Array = np.ndarray

SUCCESS_CAUSE = 1  # mirrors env.CAUSE_SUCCESS without importing the module


@dataclass(frozen=True)
class PPOConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    kl_threshold: float = 0.016
    gae_lambda: float = 0.95
    horizon: int = 32
    epochs: int = 5
    minibatches: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    grad_clip: float = 1.0
    lr: float = 3e-4
    lr_min: float = 1e-6
    lr_max: float = 1e-2
    total_steps: int = 1_000_000
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    normalize_obs: bool = True
    obs_clip: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError("clip_eps must be in (0, 1)")
        if not 0.0 < self.gamma <= 1.0 or not 0.0 < self.gae_lambda <= 1.0:
            raise ConfigError("gamma and gae_lambda must be in (0, 1]")
        if self.kl_threshold <= 0:
            raise ConfigError("kl_threshold must be positive")
        if self.horizon < 1 or self.epochs < 1 or self.minibatches < 1:
            raise ConfigError("horizon, epochs, minibatches must be >= 1")


class RunningMeanStd:
    """Streaming mean/variance (parallel Welford) for observation scaling."""

    def __init__(self, dim: int, clip: float = 10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip

    def update(self, x: Array) -> None:
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.mean.shape[0])
        n = x.shape[0]
        if n == 0:
            return
        bm = x.mean(axis=0)
        bv = x.var(axis=0)
        delta = bm - self.mean
        tot = self.count + n
        self.mean = self.mean + delta * n / tot
        self.var = (self.var * self.count + bv * n
                    + delta * delta * self.count * n / tot) / tot
        self.count = tot

    def normalize(self, x: Array) -> Array:
        z = (x - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(z, -self.clip, self.clip)

    def state_tensors(self, prefix: str) -> dict[str, Array]:
        return {f"{prefix}.mean": self.mean, f"{prefix}.var": self.var,
                f"{prefix}.count": np.array([self.count])}

    @classmethod
    def from_tensors(cls, tensors: dict[str, Array], prefix: str,
                     clip: float = 10.0) -> "RunningMeanStd":
        out = cls(tensors[f"{prefix}.mean"].shape[0], clip)
        out.mean = tensors[f"{prefix}.mean"].copy()
        out.var = tensors[f"{prefix}.var"].copy()
        out.count = float(tensors[f"{prefix}.count"][0])
        return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def compute_gae(rewards: Array, values: Array, bootstrap: Array, dones: Array,
                gamma: float, lam: float) -> tuple[Array, Array]:
    """Backward GAE recursion over a (T, B) rollout; no bootstrap across dones."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise UsageError("rewards, values, dones must share shape (T, B)")
    t_len = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_v = np.asarray(bootstrap, dtype=np.float64)
    acc = np.zeros_like(next_v)
    for t in range(t_len - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * nonterminal - values[t]
        acc = delta + gamma * lam * nonterminal * acc
        adv[t] = acc
        next_v = values[t]
    return adv, adv + values


def ppo_policy_loss(logp_new: Array, logp_old: Array, adv: Array,
                    clip_eps: float) -> float:
    ratio = np.exp(logp_new - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return float(-np.mean(np.minimum(ratio * adv, clipped * adv)))


def ppo_policy_loss_grad(logp_new: Array, logp_old: Array, adv: Array,
                         clip_eps: float) -> Array:
    """d(loss)/d(logp_new), zero in the clipped dead zone."""
    ratio = np.exp(logp_new - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    unclipped_active = ratio * adv <= clipped * adv
    return -(ratio * adv * unclipped_active) / logp_new.shape[0]


def value_loss(v_pred: Array, returns: Array) -> float:
    diff = np.asarray(v_pred) - np.asarray(returns)
    return float(np.mean(diff * diff))


def value_loss_grad(v_pred: Array, returns: Array) -> Array:
    diff = np.asarray(v_pred) - np.asarray(returns)
    return 2.0 * diff / diff.shape[0]


def normalize_advantages(adv: Array) -> Array:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def adapt_lr(lr: float, kl: float, threshold: float = 0.016,
             bounds: tuple[float, float] = (1e-6, 1e-2)) -> float:
    if kl > 2.0 * threshold:
        lr = lr / 1.5
    elif kl < threshold / 2.0:
        lr = lr * 1.5
    return float(np.clip(lr, bounds[0], bounds[1]))


# ---------------------------------------------------------------------------
# rollout storage
# ---------------------------------------------------------------------------


class RolloutBuffer:
    def __init__(self, horizon: int, batch: int, pdim: int, vdim: int, adim: int):
        self.pobs = np.zeros((horizon, batch, pdim))
        self.vobs = np.zeros((horizon, batch, vdim))
        self.actions = np.zeros((horizon, batch, adim))
        self.means = np.zeros((horizon, batch, adim))
        self.logp = np.zeros((horizon, batch))
        self.values = np.zeros((horizon, batch))
        self.rewards = np.zeros((horizon, batch))
        self.dones = np.zeros((horizon, batch))
        self.t = 0

    def add(self, pobs, vobs, action, mean, logp, value, reward, done):
        k = self.t
        self.pobs[k], self.vobs[k] = pobs, vobs
        self.actions[k], self.means[k] = action, mean
        self.logp[k], self.values[k] = logp, value
        self.rewards[k], self.dones[k] = reward, done
        self.t += 1


# ---------------------------------------------------------------------------
# policy wrapper
# ---------------------------------------------------------------------------


@dataclass
class Policy:
    """Actor plus frozen observation statistics: everything eval needs."""

    actor: NetworkParams
    norm: RunningMeanStd | None

    def act(self, pobs: Array, rng: np.random.Generator | None = None) -> Array:
        x = self.norm.normalize(pobs) if self.norm is not None else pobs
        mean, _ = mlp_forward(self.actor, x)
        if rng is None:
            return mean
        return mean + np.exp(self.actor.log_std) * rng.standard_normal(mean.shape)


@dataclass
class TrainResult:
    actor: NetworkParams
    critic: NetworkParams
    norm_p: RunningMeanStd | None
    norm_v: RunningMeanStd | None
    metrics: list[dict]
    env_steps: int
    updates: int

    @property
    def policy(self) -> Policy:
        return Policy(self.actor, self.norm_p)


def save_policy(path, result: TrainResult, meta: dict[str, str] | None = None) -> None:
    tensors = {}
    tensors.update(params_to_tensors(result.actor, "actor"))
    tensors.update(params_to_tensors(result.critic, "critic"))
    if result.norm_p is not None:
        tensors.update(result.norm_p.state_tensors("norm_p"))
        tensors.update(result.norm_v.state_tensors("norm_v"))
    save_tensors(path, tensors, meta)


def load_policy(path) -> tuple[TrainResult, dict[str, str]]:
    tensors, meta = load_tensors(path)
    actor = params_from_tensors(tensors, "actor")
    critic = params_from_tensors(tensors, "critic")
    norm_p = norm_v = None
    if "norm_p.mean" in tensors:
        norm_p = RunningMeanStd.from_tensors(tensors, "norm_p")
        norm_v = RunningMeanStd.from_tensors(tensors, "norm_v")
    result = TrainResult(actor, critic, norm_p, norm_v, [], 0, 0)
    return result, meta


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------


def train(cfg: PPOConfig, env, seed: int, out_dir=None,
          metrics_path=None) -> TrainResult:
    """Run the PPO loop on a vectorized env until the step budget is spent.

    The env must expose batch, policy_dim, privileged_dim, action_dim,
    reset(seed) and step(actions) in the TouchEnv shapes.
    """
    rng = np.random.default_rng(seed)
    adim = env.action_dim
    actor = init_mlp((env.policy_dim, *cfg.hidden, adim), rng, with_log_std=True)
    critic = init_mlp((env.privileged_dim, *cfg.hidden, 1), rng, output_gain=1.0)
    opt_a = adam_init(actor, lr=cfg.lr)
    opt_c = adam_init(critic, lr=cfg.lr)
    norm_p = RunningMeanStd(env.policy_dim, cfg.obs_clip) if cfg.normalize_obs else None
    norm_v = RunningMeanStd(env.privileged_dim, cfg.obs_clip) if cfg.normalize_obs else None

    pobs_raw, vobs_raw = env.reset(seed)
    b = env.batch
    lr = cfg.lr
    steps = 0
    updates = 0
    metrics: list[dict] = []
    ep_return = np.zeros(b)
    recent_returns: list[float] = []
    recent_success: list[float] = []
    mfh = open(metrics_path, "w") if metrics_path else None
    try:
        while steps < cfg.total_steps:
            buf = RolloutBuffer(cfg.horizon, b, env.policy_dim,
                                env.privileged_dim, adim)
            for _ in range(cfg.horizon):
                if norm_p is not None:
                    norm_p.update(pobs_raw)
                    norm_v.update(vobs_raw)
                    po = norm_p.normalize(pobs_raw)
                    vo = norm_v.normalize(vobs_raw)
                else:
                    po, vo = pobs_raw, vobs_raw
                mean, _ = mlp_forward(actor, po)
                std = np.exp(actor.log_std)
                action = mean + std * rng.standard_normal(mean.shape)
                logp = gaussian_log_prob(mean, actor.log_std, action)
                value, _ = mlp_forward(critic, vo)
                res = env.step(action)
                buf.add(po, vo, action, mean, logp, value[:, 0],
                        res.reward, res.done)
                ep_return += res.reward
                if res.done.any():
                    for i in np.flatnonzero(res.done):
                        recent_returns.append(float(ep_return[i]))
                        recent_success.append(
                            float(res.status.cause[i] == SUCCESS_CAUSE))
                    ep_return[res.done] = 0.0
                pobs_raw, vobs_raw = res.policy_obs, res.privileged_obs
                steps += b
            vo = norm_v.normalize(vobs_raw) if norm_v is not None else vobs_raw
            boot, _ = mlp_forward(critic, vo)
            adv, ret = compute_gae(buf.rewards, buf.values, boot[:, 0],
                                   buf.dones, cfg.gamma, cfg.gae_lambda)

            n = cfg.horizon * b
            flat = lambda a: a.reshape(n, *a.shape[2:])
            f_po, f_vo = flat(buf.pobs), flat(buf.vobs)
            f_act, f_mean_old = flat(buf.actions), flat(buf.means)
            f_logp_old, f_adv, f_ret = flat(buf.logp), flat(adv), flat(ret)
            log_std_old = actor.log_std.copy()

            kls, pi_losses, v_losses = [], [], []
            for _ in range(cfg.epochs):
                perm = rng.permutation(n)
                for chunk in np.array_split(perm, cfg.minibatches):
                    mb_adv = normalize_advantages(f_adv[chunk])
                    mean_new, cache = mlp_forward(actor, f_po[chunk])
                    logp_new = gaussian_log_prob(mean_new, actor.log_std,
                                                 f_act[chunk])
                    pi_loss = ppo_policy_loss(logp_new, f_logp_old[chunk],
                                              mb_adv, cfg.clip_eps)
                    dlogp = ppo_policy_loss_grad(logp_new, f_logp_old[chunk],
                                                 mb_adv, cfg.clip_eps)
                    if not np.isfinite(pi_loss):
                        _dump_minibatch(out_dir, f_po[chunk], f_act[chunk], mb_adv)
                        raise RuntimeError("non-finite policy loss; minibatch dumped")
                    var = np.exp(2.0 * actor.log_std)
                    diff = f_act[chunk] - mean_new
                    g_mean = dlogp[:, None] * diff / var
                    g_ls = (dlogp[:, None] * (diff * diff / var - 1.0)).sum(axis=0)
                    g_ls -= cfg.entropy_coef  # d(entropy)/d(log_std) = 1 per dim
                    grads = mlp_backward(actor, cache, g_mean)
                    grads.log_std = g_ls
                    grads, _ = clip_grad_norm(grads, cfg.grad_clip)
                    opt_a.lr = lr
                    actor, opt_a = adam_step(opt_a, actor, grads)
                    actor.log_std = np.clip(actor.log_std, LOG_STD_MIN, LOG_STD_MAX)

                    v_pred, vcache = mlp_forward(critic, f_vo[chunk])
                    vl = value_loss(v_pred[:, 0], f_ret[chunk])
                    if not np.isfinite(vl):
                        _dump_minibatch(out_dir, f_vo[chunk], v_pred, f_ret[chunk])
                        raise RuntimeError("non-finite value loss; minibatch dumped")
                    dv = cfg.value_coef * value_loss_grad(v_pred[:, 0], f_ret[chunk])
                    vgrads = mlp_backward(critic, vcache, dv[:, None])
                    vgrads, _ = clip_grad_norm(vgrads, cfg.grad_clip)
                    opt_c.lr = lr
                    critic, opt_c = adam_step(opt_c, critic, vgrads)

                    kl = diag_gaussian_kl(f_mean_old[chunk], log_std_old,
                                          mean_new, actor.log_std)
                    kls.append(float(kl.mean()))
                    pi_losses.append(pi_loss)
                    v_losses.append(vl)

            mean_kl = float(np.mean(kls))
            lr = adapt_lr(lr, mean_kl, cfg.kl_threshold, (cfg.lr_min, cfg.lr_max))
            updates += 1
            record = {
                "update": updates,
                "env_steps": steps,
                "mean_return": float(np.mean(recent_returns[-100:])) if recent_returns else None,
                "success_rate": float(np.mean(recent_success[-100:])) if recent_success else None,
                "kl": mean_kl,
                "lr": lr,
                "pi_loss": float(np.mean(pi_losses)),
                "v_loss": float(np.mean(v_losses)),
                "entropy": gaussian_entropy(actor.log_std),
            }
            metrics.append(record)
            if mfh:
                mfh.write(json.dumps(record) + "\n")
                mfh.flush()
    finally:
        if mfh:
            mfh.close()
    return TrainResult(actor, critic, norm_p, norm_v, metrics, steps, updates)


def _dump_minibatch(out_dir, *arrays) -> None:
    if out_dir is None:
        return
    import os
    os.makedirs(out_dir, exist_ok=True)
    np.savez(os.path.join(out_dir, "diagnostic_minibatch.npz"),
             **{f"arr{i}": a for i, a in enumerate(arrays)})
