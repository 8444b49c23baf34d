"""Asymmetric actor-critic PPO over reset distributions.

The collector runs episodes in lockstep batches: every episode starts
from a state drawn from a reset sampler, follows the stochastic policy,
and ends on drop, success (goal tasks), or the step limit. The critic
sees privileged features (velocities, contacts, goal distance) that the
actor never receives; only truncated episodes bootstrap their tail
value. Updates are standard clipped-surrogate PPO with GAE.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import RngHandle, StateVec, diff_values
from .envs import PlanarGaitEnv, TaskSpec
from .nn import (
    GaussianPolicy,
    ValueFn,
    adam_init,
    adam_step,
    clamp_log_std,
    clip_grad_norm,
    clone_policy,
    clone_value,
    entropy,
    gaussian_logprob,
    gaussian_logprob_backward,
    params,
    policy_params,
    sample_action,
    value_forward,
    value_loss,
)

LOG_FIELDS = [
    "iter",
    "env_steps",
    "mean_return",
    "success_rate",
    "drop_rate",
    "ep_len",
    "pi_loss",
    "v_loss",
    "entropy",
]


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    entropy_coef: float = 0.003
    episodes: int = 64
    iters: int = 50
    max_steps: int = 200
    max_env_steps: int = 0  # 0 = no cap; otherwise stop once the budget is spent
    lr_pi: float = 3e-4
    lr_v: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in [0, 1]")
        if not (0.0 < self.clip < 1.0):
            raise ValueError("clip must lie in (0, 1)")
        if min(self.epochs, self.minibatch, self.max_steps) < 1 or self.episodes < 0:
            raise ValueError("epochs, minibatch, max_steps must be >= 1")


@dataclass
class RolloutBatch:
    """Per-step records concatenated episode by episode."""

    obs: np.ndarray  # (T, obs_dim) actor observations
    cobs: np.ndarray  # (T, priv_dim) critic observations
    act: np.ndarray  # (T, act_dim)
    rew: np.ndarray  # (T,)
    val: np.ndarray  # (T,) collection-time value estimates
    logp: np.ndarray  # (T,) collection-time log-probs
    bounds: list[tuple[int, int]]  # [start, end) per episode
    bootstrap: np.ndarray  # (E,) tail value, 0 at true terminals
    ep_return: np.ndarray  # (E,)
    ep_len: np.ndarray  # (E,)
    success: np.ndarray  # (E,) bool
    dropped: np.ndarray  # (E,) bool
    starts: np.ndarray = field(default=None)  # (E, state_dim) reset states

    @property
    def steps(self) -> int:
        return self.rew.shape[0]

    @property
    def n_episodes(self) -> int:
        return len(self.bounds)


def collect_rollouts(policy, value, env, task: TaskSpec, sampler, config: PpoConfig, rng: RngHandle) -> RolloutBatch:
    """Run config.episodes episodes in lockstep from sampled reset states."""
    E = config.episodes
    do, dc, da = env.obs_dim(task), env.priv_dim(task), env.action_dim
    if E == 0:
        z = lambda d: np.zeros((0, d))
        return RolloutBatch(z(do), z(dc), z(da), np.zeros(0), np.zeros(0), np.zeros(0),
                            [], np.zeros(0), np.zeros(0), np.zeros(0, dtype=int),
                            np.zeros(0, dtype=bool), np.zeros(0, dtype=bool), z(env.dim))
    S = np.empty((E, env.dim))
    for i in range(E):
        s = sampler.sample(rng)
        if s.layout != env.layout:
            raise ValueError("reset state layout does not match the environment")
        S[i] = s.values
    if not np.all(env.stable_batch(S)):
        raise ValueError("reset sampler returned an unstable state")
    starts = S.copy()
    gait_env = isinstance(env, PlanarGaitEnv)
    sp = S[:, 1 : 1 + env.m].copy() if gait_env else None
    sdot = np.zeros((E, env.dim))
    goal_task = task.kind != "gait"
    active = np.ones(E, dtype=bool)
    success = np.zeros(E, dtype=bool)
    dropped = np.zeros(E, dtype=bool)
    boot = np.zeros(E)
    recs: list[list] = [[] for _ in range(E)]

    for _ in range(config.max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        obs_t = env.observe_batch(S[idx], sp[idx] if gait_env else None, task)
        cobs_t = env.priv_batch(S[idx], sdot[idx], task)
        v_t, _ = value_forward(value, cobs_t)
        a_t, logp_t = sample_action(policy, obs_t, rng)
        nxt, drop_t = env.step_batch(S[idx], a_t)
        sdot_t = diff_values(nxt, S[idx], env.layout) / env.dt
        if goal_task:
            succ_t = env.success_batch(nxt, sdot_t, task) & ~drop_t
        else:
            succ_t = np.zeros(idx.size, dtype=bool)
        rew_t = env.reward_batch(S[idx], nxt, task, succ_t)
        if gait_env:
            dq = np.clip(a_t[:, : env.m], -env.delta_max, env.delta_max)
            sp[idx] = S[idx, 1 : 1 + env.m] + dq
        for k, i in enumerate(idx):
            recs[i].append((obs_t[k], cobs_t[k], a_t[k], rew_t[k], v_t[k], logp_t[k]))
        S[idx] = nxt
        sdot[idx] = sdot_t
        done_t = drop_t | succ_t
        success[idx] |= succ_t
        dropped[idx] |= drop_t
        active[idx] &= ~done_t
        alive = ~drop_t
        if alive.any() and hasattr(sampler, "insert_states"):
            sampler.insert_states(nxt[alive], rng)

    idx = np.flatnonzero(active)  # truncated episodes bootstrap their tail
    if idx.size:
        cobs_T = env.priv_batch(S[idx], sdot[idx], task)
        v_T, _ = value_forward(value, cobs_T)
        boot[idx] = v_T

    bounds, pos = [], 0
    for i in range(E):
        bounds.append((pos, pos + len(recs[i])))
        pos += len(recs[i])
    flat = [r for rec in recs for r in rec]
    obs = np.stack([r[0] for r in flat])
    cobs = np.stack([r[1] for r in flat])
    act = np.stack([r[2] for r in flat])
    rew = np.array([r[3] for r in flat])
    val = np.array([r[4] for r in flat])
    logp = np.array([r[5] for r in flat])
    ep_return = np.array([sum(r[3] for r in rec) for rec in recs])
    ep_len = np.array([len(rec) for rec in recs], dtype=int)
    return RolloutBatch(obs, cobs, act, rew, val, logp, bounds, boot,
                        ep_return, ep_len, success, dropped, starts)


def compute_gae(batch: RolloutBatch, gamma: float, lam: float):
    """GAE(gamma, lam) per episode; returns (advantages, value targets)."""
    adv = np.zeros(batch.steps)
    for (s, e), tail in zip(batch.bounds, batch.bootstrap):
        running = 0.0
        v_next = float(tail)
        for t in range(e - 1, s - 1, -1):
            delta = batch.rew[t] + gamma * v_next - batch.val[t]
            running = delta + gamma * lam * running
            adv[t] = running
            v_next = batch.val[t]
    return adv, adv + batch.val


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    centered = adv - adv.mean()
    std = centered.std()
    return centered / std if std > 1e-12 else centered


def surrogate_loss(policy: GaussianPolicy, obs, act, logp_old, adv, clip: float, entropy_coef: float):
    """Clipped PPO objective (negated) plus entropy bonus; returns (loss, grads)."""
    logp, cache = gaussian_logprob(policy, obs, act)
    ratio = np.exp(logp - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    loss = -float(np.mean(np.minimum(unclipped, clipped))) - entropy_coef * entropy(policy)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite policy loss")
    live = unclipped <= clipped  # gradient flows only through the unclipped branch
    dlogp = -(adv * ratio * live) / logp.size
    grads = gaussian_logprob_backward(policy, cache, dlogp)
    grads[-1] -= entropy_coef
    return loss, grads


def ppo_update(policy, value, batch: RolloutBatch, adv, targets, config: PpoConfig,
               opt_pi, opt_v, rng: RngHandle):
    """Epochs of shuffled-minibatch updates; returns mean loss stats."""
    T = batch.steps
    pi_losses, v_losses = [], []
    for _ in range(config.epochs):
        perm = rng.permutation(T)
        for lo in range(0, T, config.minibatch):
            mb = perm[lo : lo + config.minibatch]
            loss_pi, g_pi = surrogate_loss(
                policy, batch.obs[mb], batch.act[mb], batch.logp[mb], adv[mb],
                config.clip, config.entropy_coef,
            )
            clip_grad_norm(g_pi, 0.5)
            adam_step(policy_params(policy), g_pi, opt_pi)
            clamp_log_std(policy.log_std)
            loss_v, g_v = value_loss(value, batch.cobs[mb], targets[mb])
            if not np.isfinite(loss_v):
                raise FloatingPointError("non-finite value loss")
            clip_grad_norm(g_v, 0.5)
            adam_step(params(value.net), g_v, opt_v)
            pi_losses.append(loss_pi)
            v_losses.append(loss_v)
    return {
        "pi_loss": float(np.mean(pi_losses)) if pi_losses else 0.0,
        "v_loss": float(np.mean(v_losses)) if v_losses else 0.0,
        "entropy": entropy(policy),
    }


@dataclass
class TrainResult:
    curve: list[dict]
    best_return: float
    best_policy: GaussianPolicy
    best_value: ValueFn


def write_curve(rows: list[dict], path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=LOG_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in LOG_FIELDS})


def read_curve(path) -> list[dict]:
    with open(path, newline="") as f:
        rdr = csv.DictReader(f)
        if rdr.fieldnames != LOG_FIELDS:
            raise ValueError(f"unexpected curve columns {rdr.fieldnames}")
        return [{k: float(v) for k, v in row.items()} for row in rdr]


def train(env, task: TaskSpec, sampler, policy: GaussianPolicy, value: ValueFn,
          config: PpoConfig, log_path=None, difficulty=None) -> TrainResult:
    """collect -> GAE -> update for config.iters iterations.

    `difficulty`, when given, maps cumulative env-steps to a scalar in
    [0, 1] applied through env.with_difficulty before each collection.
    """
    rng = RngHandle(config.seed)
    opt_pi = adam_init(policy_params(policy), config.lr_pi)
    opt_v = adam_init(params(value.net), config.lr_v)
    curve: list[dict] = []
    env_steps = 0
    best_return = -np.inf
    best_policy, best_value = clone_policy(policy), clone_value(value)
    for it in range(config.iters):
        if config.max_env_steps and env_steps >= config.max_env_steps:
            break
        cur = env.with_difficulty(difficulty(env_steps)) if difficulty else env
        batch = collect_rollouts(policy, value, cur, task, sampler, config, rng)
        env_steps += batch.steps
        adv, targets = compute_gae(batch, config.gamma, config.lam)
        adv = normalize_advantages(adv)
        stats = ppo_update(policy, value, batch, adv, targets, config, opt_pi, opt_v, rng)
        mean_return = float(batch.ep_return.mean()) if batch.n_episodes else 0.0
        curve.append({
            "iter": it,
            "env_steps": env_steps,
            "mean_return": mean_return,
            "success_rate": float(batch.success.mean()) if batch.n_episodes else 0.0,
            "drop_rate": float(batch.dropped.mean()) if batch.n_episodes else 0.0,
            "ep_len": float(batch.ep_len.mean()) if batch.n_episodes else 0.0,
            "pi_loss": stats["pi_loss"],
            "v_loss": stats["v_loss"],
            "entropy": stats["entropy"],
        })
        if mean_return > best_return:
            best_return = mean_return
            best_policy, best_value = clone_policy(policy), clone_value(value)
    if log_path is not None:
        write_curve(curve, log_path)
    return TrainResult(curve, best_return, best_policy, best_value)
