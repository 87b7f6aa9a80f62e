"""Dense MLP substrate for actor/critic networks.

Plain numpy implementation of everything the trainer needs: ELU MLPs with
manual forward/backward, a diagonal-Gaussian policy head, bias-corrected Adam,
and a text checkpoint format. Hidden sizes default to (512, 256, 128).
All math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

Array = np.ndarray

DEFAULT_HIDDEN = (512, 256, 128)
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = float(np.log(2.0 * np.pi))

CHECKPOINT_MAGIC = "blindtouch-checkpoint v1"


def elu(x):
    """ELU activation: x for x >= 0, exp(x) - 1 below."""
    x = np.asarray(x, dtype=np.float64)
    # expm1 is evaluated on min(x, 0) so the unused branch cannot overflow
    return np.where(x >= 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    """Derivative of elu; equals 1 from both sides at 0."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0.0, 1.0, np.expm1(np.minimum(x, 0.0)) + 1.0)


@dataclass
class NetworkParams:
    """Weights/biases of an MLP; actor variants carry a state-independent log_std.

    weights[k] has shape (d_k, d_{k+1}); hidden layers use ELU, the final
    layer is affine.
    """

    weights: list[Array]
    biases: list[Array]
    log_std: Array | None = None

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def validate(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("weights/biases length mismatch")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigError(f"layer {k}: bias shape {b.shape} vs weight {w.shape}")
            if k > 0 and w.shape[0] != self.weights[k - 1].shape[1]:
                raise ConfigError(f"layer {k}: input dim {w.shape[0]} does not chain")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ConfigError(f"layer {k}: non-finite parameters")
        if self.log_std is not None and not np.isfinite(self.log_std).all():
            raise ConfigError("non-finite log_std")

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            None if self.log_std is None else self.log_std.copy(),
        )

    def num_params(self) -> int:
        n = sum(w.size for w in self.weights) + sum(b.size for b in self.biases)
        return n + (0 if self.log_std is None else self.log_std.size)


@dataclass
class GradientSet:
    """Gradients shaped exactly like a NetworkParams."""

    weights: list[Array]
    biases: list[Array]
    log_std: Array | None = None

    def check_congruent(self, params: NetworkParams) -> None:
        ok = len(self.weights) == len(params.weights) and all(
            gw.shape == w.shape for gw, w in zip(self.weights, params.weights)
        ) and all(gb.shape == b.shape for gb, b in zip(self.biases, params.biases))
        if self.log_std is not None or params.log_std is not None:
            ok = ok and (
                self.log_std is not None
                and params.log_std is not None
                and self.log_std.shape == params.log_std.shape
            )
        if not ok:
            raise ConfigError("gradient shapes not congruent with parameters")

    def global_norm(self) -> float:
        total = sum(float(np.sum(g * g)) for g in self.weights)
        total += sum(float(np.sum(g * g)) for g in self.biases)
        if self.log_std is not None:
            total += float(np.sum(self.log_std * self.log_std))
        return float(np.sqrt(total))

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(
            [w * factor for w in self.weights],
            [b * factor for b in self.biases],
            None if self.log_std is None else self.log_std * factor,
        )


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> Array:
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a if rows >= cols else a.T)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(
    sizes: tuple[int, ...] | list[int],
    rng: np.random.Generator,
    with_log_std: bool = False,
    hidden_gain: float = float(np.sqrt(2.0)),
    output_gain: float = 0.01,
) -> NetworkParams:
    """Build an MLP with scaled orthogonal init (sqrt(2) hidden, small output)."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2:
        raise ConfigError("need at least input and output sizes")
    weights, biases = [], []
    for k in range(len(sizes) - 1):
        gain = output_gain if k == len(sizes) - 2 else hidden_gain
        weights.append(_orthogonal(rng, sizes[k], sizes[k + 1], gain))
        biases.append(np.zeros(sizes[k + 1]))
    log_std = np.zeros(sizes[-1]) if with_log_std else None
    return NetworkParams(weights, biases, log_std)


def mlp_forward(params: NetworkParams, x: Array) -> tuple[Array, list]:
    """Forward pass; returns output and the cache needed by mlp_backward.

    x may be a single vector (d0,) or a batch (..., d0).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise ConfigError(
            f"input dim {x.shape[-1]} != first layer {params.weights[0].shape[0]}"
        )
    cache = []
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        cache.append((h, z))
        h = z if k == last else elu(z)
    return h, cache


def mlp_backward(params: NetworkParams, cache: list, grad_output: Array) -> GradientSet:
    """Reverse accumulation of d(grad_output . output)/d(params).

    Batched grad_output is summed over the batch; scale it beforehand to get
    means. The cache must come from a matching mlp_forward call.
    """
    if len(cache) != len(params.weights):
        raise ConfigError("cache depth does not match parameter layers")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape[-1] != params.weights[-1].shape[1]:
        raise ConfigError("grad_output dim does not match output layer")
    g = np.atleast_2d(g).reshape(-1, g.shape[-1])
    gws: list[Array] = [None] * len(params.weights)  # type: ignore[list-item]
    gbs: list[Array] = [None] * len(params.weights)  # type: ignore[list-item]
    for k in range(len(params.weights) - 1, -1, -1):
        h, z = cache[k]
        h2 = np.atleast_2d(h).reshape(-1, h.shape[-1])
        if h2.shape[0] != g.shape[0]:
            raise ConfigError("cache/grad batch mismatch")
        gws[k] = h2.T @ g
        gbs[k] = g.sum(axis=0)
        if k > 0:
            z_prev = np.atleast_2d(cache[k - 1][1]).reshape(-1, h.shape[-1])
            g = (g @ params.weights[k].T) * elu_grad(z_prev)
    ls = None if params.log_std is None else np.zeros_like(params.log_std)
    return GradientSet(gws, gbs, ls)


def gaussian_log_prob(mean: Array, log_std: Array, sample: Array) -> Array:
    """Diagonal-Gaussian log density summed over the last axis."""
    mean = np.asarray(mean, dtype=np.float64)
    sample = np.asarray(sample, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    z = (sample - mean) / np.exp(log_std)
    return -0.5 * np.sum(z * z + 2.0 * log_std + LOG_2PI, axis=-1)


def gaussian_entropy(log_std: Array) -> float:
    """Entropy of a diagonal Gaussian, summed over dimensions."""
    log_std = np.asarray(log_std, dtype=np.float64)
    return float(np.sum(log_std + 0.5 * (1.0 + LOG_2PI)))


def diag_gaussian_kl(mean0: Array, log_std0: Array, mean1: Array, log_std1: Array) -> Array:
    """KL(N0 || N1) for diagonal Gaussians, summed over the last axis."""
    v0 = np.exp(2.0 * np.asarray(log_std0, dtype=np.float64))
    v1 = np.exp(2.0 * np.asarray(log_std1, dtype=np.float64))
    dm = np.asarray(mean1, dtype=np.float64) - np.asarray(mean0, dtype=np.float64)
    return np.sum(log_std1 - log_std0 + (v0 + dm * dm) / (2.0 * v1) - 0.5, axis=-1)


@dataclass
class AdamState:
    """Bias-corrected Adam moments, congruent with one NetworkParams."""

    m_w: list[Array]
    v_w: list[Array]
    m_b: list[Array]
    v_b: list[Array]
    m_ls: Array | None
    v_ls: Array | None
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: NetworkParams, lr: float = 3e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m_w=[np.zeros_like(w) for w in params.weights],
        v_w=[np.zeros_like(w) for w in params.weights],
        m_b=[np.zeros_like(b) for b in params.biases],
        v_b=[np.zeros_like(b) for b in params.biases],
        m_ls=None if params.log_std is None else np.zeros_like(params.log_std),
        v_ls=None if params.log_std is None else np.zeros_like(params.log_std),
        step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def _adam_update(m: Array, v: Array, g: Array, p: Array, state: AdamState,
                 bc1: float, bc2: float) -> tuple[Array, Array, Array]:
    m = state.beta1 * m + (1.0 - state.beta1) * g
    v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
    p = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return m, v, p


def adam_step(state: AdamState, params: NetworkParams, grads: GradientSet
              ) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    grads.check_congruent(params)
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_w, new_b = [], []
    m_w, v_w, m_b, v_b = [], [], [], []
    for w, gw, m, v in zip(params.weights, grads.weights, state.m_w, state.v_w):
        m2, v2, w2 = _adam_update(m, v, gw, w, state, bc1, bc2)
        m_w.append(m2); v_w.append(v2); new_w.append(w2)
    for b, gb, m, v in zip(params.biases, grads.biases, state.m_b, state.v_b):
        m2, v2, b2 = _adam_update(m, v, gb, b, state, bc1, bc2)
        m_b.append(m2); v_b.append(v2); new_b.append(b2)
    new_ls, m_ls, v_ls = params.log_std, state.m_ls, state.v_ls
    if params.log_std is not None:
        m_ls, v_ls, new_ls = _adam_update(
            state.m_ls, state.v_ls, grads.log_std, params.log_std, state, bc1, bc2)
    new_state = replace(state, m_w=m_w, v_w=v_w, m_b=m_b, v_b=v_b,
                        m_ls=m_ls, v_ls=v_ls, step=t)
    return NetworkParams(new_w, new_b, new_ls), new_state


def clip_grad_norm(grads: GradientSet, max_norm: float) -> tuple[GradientSet, float]:
    """Scale grads so the global L2 norm is at most max_norm."""
    norm = grads.global_norm()
    if max_norm > 0.0 and norm > max_norm:
        return grads.scaled(max_norm / norm), norm
    return grads, norm


# ---------------------------------------------------------------------------
# Checkpoint file format (text, versioned):
#   line 1:  blindtouch-checkpoint v1
#   meta <key> <value>          -- any number of metadata lines
#   tensor <name> <d0> [d1]     -- followed by d0 lines (or 1 line for vectors)
# Values are written with 17 significant digits so float64 round-trips exactly.
# ---------------------------------------------------------------------------

def save_tensors(path, tensors: dict[str, Array], meta: dict[str, str] | None = None) -> None:
    with open(path, "w") as f:
        f.write(CHECKPOINT_MAGIC + "\n")
        for k, v in (meta or {}).items():
            if any(c.isspace() for c in str(k)):
                raise ConfigError(f"meta key {k!r} contains whitespace")
            f.write(f"meta {k} {v}\n")
        for name, arr in tensors.items():
            a = np.asarray(arr, dtype=np.float64)
            if a.ndim == 0:
                a = a.reshape(1)
            if a.ndim == 1:
                f.write(f"tensor {name} {a.shape[0]}\n")
                f.write(" ".join("%.17g" % x for x in a) + "\n")
            elif a.ndim == 2:
                f.write(f"tensor {name} {a.shape[0]} {a.shape[1]}\n")
                for row in a:
                    f.write(" ".join("%.17g" % x for x in row) + "\n")
            else:
                raise ConfigError("only 1-D/2-D tensors are checkpointable")


def load_tensors(path) -> tuple[dict[str, Array], dict[str, str]]:
    tensors: dict[str, Array] = {}
    meta: dict[str, str] = {}
    with open(path) as f:
        header = f.readline().rstrip("\n")
        if header != CHECKPOINT_MAGIC:
            raise ConfigError(f"bad checkpoint header: {header!r}")
        line = f.readline()
        while line:
            parts = line.split()
            if not parts:
                line = f.readline()
                continue
            if parts[0] == "meta":
                meta[parts[1]] = line.split(None, 2)[2].rstrip("\n") if len(parts) > 2 else ""
            elif parts[0] == "tensor":
                name = parts[1]
                dims = [int(d) for d in parts[2:]]
                if len(dims) == 1:
                    row = np.array(f.readline().split(), dtype=np.float64)
                    if row.size != dims[0]:
                        raise ConfigError(f"tensor {name}: expected {dims[0]} values")
                    tensors[name] = row
                else:
                    rows = [np.array(f.readline().split(), dtype=np.float64)
                            for _ in range(dims[0])]
                    arr = np.stack(rows)
                    if arr.shape != tuple(dims):
                        raise ConfigError(f"tensor {name}: shape {arr.shape} != {dims}")
                    tensors[name] = arr
            else:
                raise ConfigError(f"unexpected checkpoint line: {line!r}")
            line = f.readline()
    return tensors, meta


def params_to_tensors(params: NetworkParams, prefix: str) -> dict[str, Array]:
    out: dict[str, Array] = {}
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        out[f"{prefix}.w{k}"] = w
        out[f"{prefix}.b{k}"] = b
    if params.log_std is not None:
        out[f"{prefix}.log_std"] = params.log_std
    return out


def params_from_tensors(tensors: dict[str, Array], prefix: str) -> NetworkParams:
    weights, biases = [], []
    k = 0
    while f"{prefix}.w{k}" in tensors:
        weights.append(np.asarray(tensors[f"{prefix}.w{k}"], dtype=np.float64))
        biases.append(np.asarray(tensors[f"{prefix}.b{k}"], dtype=np.float64))
        k += 1
    if not weights:
        raise ConfigError(f"no tensors found under prefix {prefix!r}")
    log_std = tensors.get(f"{prefix}.log_std")
    p = NetworkParams(weights, biases,
                      None if log_std is None else np.asarray(log_std, dtype=np.float64))
    p.validate()
    return p
