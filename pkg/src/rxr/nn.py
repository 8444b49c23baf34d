"""Small dense networks with hand-written reverse-mode gradients.

Everything downstream (behavior cloning, PPO) composes these pieces:
tanh MLPs, a diagonal-Gaussian policy head with state-independent
log-std, Adam with bias correction, and a flat binary checkpoint
format. No autodiff framework; gradients are chained layer rules and
are tested against central finite differences.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .core import (
    DimensionError,
    FormatError,
    RngHandle,
    VersionError,
    read_exact,
    read_f64_array,
    write_f64_array,
)

NET_MAGIC = b"RXRP"
NET_VERSION = 1

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Mlp:
    sizes: tuple[int, ...]
    weights: list[np.ndarray]  # (n_out, n_in) per layer
    biases: list[np.ndarray]

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]


def init_mlp(sizes, rng: RngHandle, out_scale: float = 1.0) -> Mlp:
    """Gaussian fan-in init, zero biases, optional shrink of the last layer."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"bad layer sizes {sizes}")
    weights, biases = [], []
    for n_in, n_out in zip(sizes, sizes[1:]):
        weights.append(rng.normal(scale=1.0 / math.sqrt(n_in), size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    weights[-1] = weights[-1] * out_scale
    return Mlp(sizes, weights, biases)


def params(net: Mlp) -> list[np.ndarray]:
    """Flat parameter list, interleaved [W0, b0, W1, b1, ...]."""
    out = []
    for W, b in zip(net.weights, net.biases):
        out.append(W)
        out.append(b)
    return out


def mlp_forward(net: Mlp, x):
    """Returns (output, cache); cache feeds mlp_backward."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != net.in_dim:
        raise DimensionError(f"input dim {x.shape[1]} != {net.in_dim}")
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W.T + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return h, acts


def mlp_backward(net: Mlp, cache, gy):
    """Exact gradients for output-gradient gy; returns (param grads, input grad).

    Param grads follow the params() layout and are summed over the batch.
    """
    gy = np.atleast_2d(np.asarray(gy, dtype=float))
    if gy.shape != cache[-1].shape:
        raise DimensionError(f"output-grad shape {gy.shape} != {cache[-1].shape}")
    last = len(net.weights) - 1
    grads = [None] * (2 * len(net.weights))
    g = gy
    for i in range(last, -1, -1):
        dz = g if i == last else g * (1.0 - cache[i + 1] ** 2)
        grads[2 * i] = dz.T @ cache[i]
        grads[2 * i + 1] = dz.sum(axis=0)
        g = dz @ net.weights[i]
    return grads, g


def zero_grads(net: Mlp) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in params(net)]


def mse_loss(net: Mlp, x, target):
    """Mean squared error over batch and output dims; returns (loss, grads)."""
    y, cache = mlp_forward(net, x)
    target = np.atleast_2d(np.asarray(target, dtype=float))
    err = y - target
    loss = float(np.mean(err**2))
    grads, _ = mlp_backward(net, cache, 2.0 * err / err.size)
    return loss, grads


# ---------------------------------------------------------------------------
# Gaussian policy head


@dataclass
class GaussianPolicy:
    net: Mlp
    log_std: np.ndarray  # state-independent, one per action dim

    @property
    def obs_dim(self) -> int:
        return self.net.in_dim

    @property
    def act_dim(self) -> int:
        return self.net.out_dim


def clone_net(net: Mlp) -> Mlp:
    return Mlp(net.sizes, [W.copy() for W in net.weights], [b.copy() for b in net.biases])


def make_policy(obs_dim, act_dim, rng: RngHandle, hidden=(64, 64), log_std_init=None) -> GaussianPolicy:
    if log_std_init is None:
        log_std_init = math.log(0.5 * 0.15)  # match the planner's action scale
    net = init_mlp((obs_dim, *hidden, act_dim), rng, out_scale=0.01)
    log_std = np.full(act_dim, float(log_std_init))
    return GaussianPolicy(net, clamp_log_std(log_std))


def clamp_log_std(log_std: np.ndarray) -> np.ndarray:
    np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX, out=log_std)
    return log_std


def policy_params(policy: GaussianPolicy) -> list[np.ndarray]:
    return params(policy.net) + [policy.log_std]


def clone_policy(policy: GaussianPolicy) -> GaussianPolicy:
    return GaussianPolicy(clone_net(policy.net), policy.log_std.copy())


def policy_mean(policy: GaussianPolicy, obs) -> np.ndarray:
    mu, _ = mlp_forward(policy.net, obs)
    return mu


def sample_action(policy: GaussianPolicy, obs, rng: RngHandle):
    """Draw a ~ N(mu(obs), diag(exp(log_std)^2)); returns (actions, logps)."""
    mu = policy_mean(policy, obs)
    std = np.exp(policy.log_std)
    eps = rng.normal(size=mu.shape)
    act = mu + std * eps
    logp = -0.5 * np.sum(eps**2, axis=1) - np.sum(policy.log_std) - 0.5 * policy.act_dim * LOG_2PI
    return act, logp


def gaussian_logprob(policy: GaussianPolicy, obs, act):
    """Log density of `act` rows; returns (logp (B,), cache for the backward)."""
    act = np.atleast_2d(np.asarray(act, dtype=float))
    mu, net_cache = mlp_forward(policy.net, obs)
    if act.shape != mu.shape:
        raise DimensionError(f"action shape {act.shape} != {mu.shape}")
    std = np.exp(policy.log_std)
    z = (act - mu) / std
    logp = -0.5 * np.sum(z**2, axis=1) - np.sum(policy.log_std) - 0.5 * policy.act_dim * LOG_2PI
    return logp, (net_cache, z, std)


def gaussian_logprob_backward(policy: GaussianPolicy, cache, dlogp):
    """Gradients of sum_i dlogp[i] * logp_i in policy_params() layout."""
    net_cache, z, std = cache
    dlogp = np.asarray(dlogp, dtype=float)[:, None]
    g_mu = dlogp * z / std
    net_grads, _ = mlp_backward(policy.net, net_cache, g_mu)
    g_log_std = np.sum(dlogp * (z**2 - 1.0), axis=0)
    return net_grads + [g_log_std]


def entropy(policy: GaussianPolicy) -> float:
    """Differential entropy; depends only on log_std for a state-independent std."""
    return float(np.sum(policy.log_std) + 0.5 * policy.act_dim * (1.0 + LOG_2PI))


def entropy_grad(policy: GaussianPolicy) -> list[np.ndarray]:
    return zero_grads(policy.net) + [np.ones_like(policy.log_std)]


# ---------------------------------------------------------------------------
# Value function


@dataclass
class ValueFn:
    net: Mlp


def make_value(obs_dim, rng: RngHandle, hidden=(64, 64)) -> ValueFn:
    return ValueFn(init_mlp((obs_dim, *hidden, 1), rng))


def clone_value(value: ValueFn) -> ValueFn:
    return ValueFn(clone_net(value.net))


def value_forward(value: ValueFn, obs):
    v, cache = mlp_forward(value.net, obs)
    return v[:, 0], cache


def value_loss(value: ValueFn, obs, targets):
    """0.5 * mean squared TD-target error; returns (loss, grads)."""
    v, cache = value_forward(value, obs)
    targets = np.asarray(targets, dtype=float)
    err = v - targets
    loss = float(0.5 * np.mean(err**2))
    grads, _ = mlp_backward(value.net, cache, (err / err.size)[:, None])
    return loss, grads


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(param_list, lr: float) -> AdamState:
    return AdamState(lr, [np.zeros_like(p) for p in param_list], [np.zeros_like(p) for p in param_list])


def adam_step(param_list, grads, state: AdamState):
    """In-place Adam update with bias correction; rejects non-finite gradients."""
    if len(param_list) != len(state.m) or len(grads) != len(state.m):
        raise DimensionError("parameter/gradient/state length mismatch")
    state.t += 1
    b1t = 1.0 - state.beta1**state.t
    b2t = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(param_list, grads, state.m, state.v):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in adam_step")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g**2
        p -= state.lr * (m / b1t) / (np.sqrt(v / b2t) + state.eps)
    return param_list


def clip_grad_norm(grads, max_norm: float) -> float:
    """Scale grads in place so the global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g**2)) for g in grads))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


# ---------------------------------------------------------------------------
# Checkpoints


def _write_net(f, net: Mlp):
    f.write(struct.pack("<I", len(net.sizes)))
    f.write(struct.pack(f"<{len(net.sizes)}I", *net.sizes))
    for W, b in zip(net.weights, net.biases):
        write_f64_array(f, W.ravel())
        write_f64_array(f, b)


def _read_net(f) -> Mlp:
    (ns,) = struct.unpack("<I", read_exact(f, 4))
    sizes = struct.unpack(f"<{ns}I", read_exact(f, 4 * ns))
    weights, biases = [], []
    for n_in, n_out in zip(sizes, sizes[1:]):
        weights.append(read_f64_array(f, n_in * n_out).reshape(n_out, n_in))
        biases.append(read_f64_array(f, n_out))
    return Mlp(tuple(sizes), weights, biases)


def _open_checkpoint(f):
    magic = read_exact(f, 4)
    if magic != NET_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    (version,) = struct.unpack("<I", read_exact(f, 4))
    if version != NET_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    (flag,) = struct.unpack("<B", read_exact(f, 1))
    return flag


def save_policy(policy: GaussianPolicy, path):
    with open(path, "wb") as f:
        f.write(NET_MAGIC)
        f.write(struct.pack("<I", NET_VERSION))
        f.write(struct.pack("<B", 1))
        _write_net(f, policy.net)
        write_f64_array(f, policy.log_std)


def load_policy(path) -> GaussianPolicy:
    with open(path, "rb") as f:
        if _open_checkpoint(f) != 1:
            raise FormatError("checkpoint holds a value function, not a policy")
        net = _read_net(f)
        log_std = read_f64_array(f, net.out_dim)
    return GaussianPolicy(net, clamp_log_std(log_std))


def save_value(value: ValueFn, path):
    with open(path, "wb") as f:
        f.write(NET_MAGIC)
        f.write(struct.pack("<I", NET_VERSION))
        f.write(struct.pack("<B", 0))
        _write_net(f, value.net)


def load_value(path) -> ValueFn:
    with open(path, "rb") as f:
        if _open_checkpoint(f) != 0:
            raise FormatError("checkpoint holds a policy, not a value function")
        net = _read_net(f)
    if net.out_dim != 1:
        raise FormatError("value net must have scalar output")
    return ValueFn(net)
