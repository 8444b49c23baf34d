"""Imitation pre-training from tree trajectories.

Tree paths are quasi-static: consecutive states differ by small actuated
steps. Action labels are scaled coordinate differences a_k = beta * (q_{k+1}
- q_k) over the actuated dims (object pose excluded), paired with the
observation at the earlier state. Behavior cloning fits the policy mean
net to these labels; the critic is then pre-trained on rollouts of the
cloned (fixed) policy so PPO starts with a sane baseline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import ActionVec, ObservationVec, RngHandle, diff_values
from .envs import PlanarGaitEnv, TaskSpec
from .extract import Trajectory, extract_paths
from .nn import adam_init, adam_step, mse_loss, params, value_loss
from .ppo import PpoConfig, collect_rollouts, compute_gae


@dataclass
class DemoPair:
    obs: ObservationVec
    act: ActionVec


@dataclass
class IptConfig:
    beta: float = 2.0
    bc_epochs: int = 100
    bc_batch: int = 64
    value_steps: int = 200_000
    episodes: int = 16
    max_steps: int = 200
    value_epochs: int = 4
    value_batch: int = 64
    gamma: float = 0.99
    lam: float = 0.95
    lr_pi: float = 1e-3
    lr_v: float = 1e-3

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if min(self.bc_epochs, self.value_steps) < 0:
            raise ValueError("epoch/step budgets must be non-negative")
        if min(self.bc_batch, self.episodes, self.max_steps, self.value_epochs, self.value_batch) < 1:
            raise ValueError("batch/episode settings must be >= 1")
        if self.lr_pi <= 0 or self.lr_v <= 0:
            raise ValueError("learning rates must be positive")


def _actuated(env) -> slice:
    """Dims the policy commands: fingers (joints + radial) or the full corridor point."""
    if isinstance(env, PlanarGaitEnv):
        return slice(1, 1 + 2 * env.m)
    return slice(0, env.dim)


def label_actions(traj: Trajectory, beta: float, env, task: TaskSpec) -> list[DemoPair]:
    """One DemoPair per consecutive state pair; empty for length-1 paths."""
    sel = _actuated(env)
    out = []
    for s0, s1 in zip(traj.states, traj.states[1:]):
        d = diff_values(s1.values, s0.values, env.layout)[sel]
        obs = env.observe(s0, None, task)
        out.append(DemoPair(obs, ActionVec(beta * d)))
    return out


def demos_from_tree(tree, env, task: TaskSpec, p_max: int, beta: float, rng: RngHandle) -> list[DemoPair]:
    pairs = []
    for traj in extract_paths(tree, task, p_max, rng):
        pairs.extend(label_actions(traj, beta, env, task))
    return pairs


def behavior_clone(dataset: list[DemoPair], policy, config: IptConfig, rng: RngHandle):
    """Minibatch MSE regression of the mean net onto the labels.

    Returns (policy, per-epoch mean loss). The log-std head is untouched.
    """
    if not dataset:
        raise ValueError("empty demonstration dataset")
    X = np.stack([p.obs.values for p in dataset])
    Y = np.stack([p.act.values for p in dataset])
    opt = adam_init(params(policy.net), config.lr_pi)
    losses = []
    for _ in range(config.bc_epochs):
        perm = rng.permutation(len(dataset))
        epoch = []
        for lo in range(0, len(dataset), config.bc_batch):
            mb = perm[lo : lo + config.bc_batch]
            loss, grads = mse_loss(policy.net, X[mb], Y[mb])
            if not np.isfinite(loss):
                raise FloatingPointError("non-finite behavior-cloning loss")
            adam_step(params(policy.net), grads, opt)
            epoch.append(loss)
        losses.append(float(np.mean(epoch)))
    return policy, losses


def pretrain_value(policy, value, env, task: TaskSpec, sampler, config: IptConfig, rng: RngHandle):
    """Fit the critic on rollouts of the frozen policy until the step budget.

    Targets are the same GAE returns PPO regresses on. Returns
    (value, per-round mean loss, env steps consumed).
    """
    roll_cfg = PpoConfig(gamma=config.gamma, lam=config.lam,
                         episodes=config.episodes, max_steps=config.max_steps)
    opt = adam_init(params(value.net), config.lr_v)
    losses = []
    steps = 0
    while steps < config.value_steps:
        batch = collect_rollouts(policy, value, env, task, sampler, roll_cfg, rng)
        if batch.steps == 0:
            break
        steps += batch.steps
        _, targets = compute_gae(batch, config.gamma, config.lam)
        round_losses = []
        for _ in range(config.value_epochs):
            perm = rng.permutation(batch.steps)
            for lo in range(0, batch.steps, config.value_batch):
                mb = perm[lo : lo + config.value_batch]
                loss, grads = value_loss(value, batch.cobs[mb], targets[mb])
                if not np.isfinite(loss):
                    raise FloatingPointError("non-finite value-pretraining loss")
                adam_step(params(value.net), grads, opt)
                round_losses.append(loss)
        losses.append(float(np.mean(round_losses)))
    return value, losses, steps


# ---------------------------------------------------------------------------
# demo dataset files


def save_demos(dataset: list[DemoPair], path):
    if not dataset:
        raise ValueError("refusing to save an empty demo dataset")
    n = dataset[0].obs.values.shape[0]
    d = dataset[0].act.dim
    header = [f"obs_{i}" for i in range(n)] + [f"act_{j}" for j in range(d)]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for p in dataset:
            w.writerow([repr(float(v)) for v in p.obs.values] + [repr(float(v)) for v in p.act.values])


def load_demos(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rows back as (obs values, action values); mask info is not persisted."""
    with open(path, newline="") as f:
        rdr = csv.reader(f)
        header = next(rdr)
        n = sum(1 for h in header if h.startswith("obs_"))
        d = len(header) - n
        if n == 0 or d == 0 or header != [f"obs_{i}" for i in range(n)] + [f"act_{j}" for j in range(d)]:
            raise ValueError(f"unexpected demo header {header}")
        out = []
        for row in rdr:
            vals = np.array([float(v) for v in row])
            out.append((vals[:n], vals[n:]))
    return out
