from __future__ import annotations

import numpy as np
import pytest

from rxr.core import Layout, RngHandle, StateVec
from rxr.envs import PlanarGaitEnv, TaskSpec
from rxr.nn import (
    gaussian_logprob,
    make_policy,
    make_value,
    params,
    policy_mean,
    policy_params,
    value_forward,
)
from rxr.ppo import (
    PpoConfig,
    RolloutBatch,
    collect_rollouts,
    compute_gae,
    normalize_advantages,
    ppo_update,
    read_curve,
    surrogate_loss,
    train,
    write_curve,
)

GAIT = TaskSpec(kind="gait")


class QuadEnv:
    """Bandit fixture: next state = clipped action, reward = -|x' - x*|^2."""

    def __init__(self, a_star=(0.6, -0.3)):
        self.layout = Layout.of([("linear", -2, 2), ("linear", -2, 2)])
        self.a_star = np.asarray(a_star, dtype=float)
        self.dt = 1.0
        self.difficulties = []

    dim = 2
    action_dim = 2

    def initial_state(self):
        return StateVec(np.zeros(2), self.layout)

    def stable_batch(self, S):
        return np.ones(np.atleast_2d(S).shape[0], dtype=bool)

    def step_batch(self, S, A):
        N = np.clip(np.asarray(A, dtype=float), -2.0, 2.0)
        return N, np.zeros(N.shape[0], dtype=bool)

    def obs_dim(self, task):
        return 1

    def observe_batch(self, S, setpoints, task):
        return np.zeros((np.atleast_2d(S).shape[0], 1))

    def priv_dim(self, task):
        return 4

    def priv_batch(self, S, Sdot, task):
        return np.concatenate([np.atleast_2d(S), np.atleast_2d(Sdot)], axis=1)

    def reward_batch(self, P, N, task, success):
        d = np.atleast_2d(N) - self.a_star
        return -np.sum(d * d, axis=1)

    def with_difficulty(self, d):
        self.difficulties.append(float(d))
        return self


class DriftEnv(QuadEnv):
    """Episodes end by drop: x0 integrates the first action dim, drop when x0 > 1."""

    def step_batch(self, S, A):
        N = np.atleast_2d(S).copy()
        N[:, 0] = np.clip(N[:, 0] + np.atleast_2d(A)[:, 0], -2.0, 2.0)
        return N, N[:, 0] > 1.0

    def stable_batch(self, S):
        return np.atleast_2d(S)[:, 0] <= 1.0

    def reward_batch(self, P, N, task, success):
        return np.atleast_2d(N)[:, 0] - np.atleast_2d(P)[:, 0]


class ListSampler:
    def __init__(self, states):
        self.states = states
        self.calls = 0

    def sample(self, rng):
        s = self.states[self.calls % len(self.states)]
        self.calls += 1
        return s


class RecordingSampler(ListSampler):
    def __init__(self, states):
        super().__init__(states)
        self.inserted = 0

    def insert_states(self, values, rng):
        self.inserted += values.shape[0]


def stub_batch(rew_eps, val_eps, boots):
    """RolloutBatch carrying only what compute_gae reads."""
    rew = np.concatenate(rew_eps)
    val = np.concatenate(val_eps)
    bounds, pos = [], 0
    for r in rew_eps:
        bounds.append((pos, pos + len(r)))
        pos += len(r)
    T = len(rew)
    z = np.zeros((T, 1))
    e = len(rew_eps)
    return RolloutBatch(z, z, z, rew, val, np.zeros(T), bounds, np.asarray(boots, dtype=float),
                        np.zeros(e), np.zeros(e, dtype=int), np.zeros(e, dtype=bool),
                        np.zeros(e, dtype=bool), np.zeros((e, 1)))


def gae_bruteforce(rew, val, boot, gamma, lam):
    T = len(rew)
    v_ext = np.append(val, boot)
    delta = rew + gamma * v_ext[1:] - v_ext[:-1]
    adv = np.zeros(T)
    for t in range(T):
        for l in range(T - t):
            adv[t] += (gamma * lam) ** l * delta[t + l]
    return adv


# ---------------------------------------------------------------------------
# GAE


def test_gae_single_step_terminal_episode():
    batch = stub_batch([np.array([2.5])], [np.array([0.7])], [0.0])
    adv, targ = compute_gae(batch, gamma=0.9, lam=0.8)
    np.testing.assert_allclose(adv, [2.5 - 0.7], atol=1e-15)
    np.testing.assert_allclose(targ, [2.5], atol=1e-15)


def test_gae_undiscounted_mc_telescopes():
    rew = np.array([1.0, -0.5, 2.0, 0.25])
    val = np.array([0.3, -0.1, 0.9, 0.2])
    batch = stub_batch([rew], [val], [0.0])
    adv, _ = compute_gae(batch, gamma=1.0, lam=1.0)
    expect = np.array([np.sum(rew[t:]) for t in range(4)]) - val
    np.testing.assert_allclose(adv, expect, atol=1e-12)


def test_gae_matches_bruteforce_oracle():
    rng = RngHandle(0)
    lens = [7, 50, 13]
    rew_eps = [rng.normal(size=n) for n in lens]
    val_eps = [rng.normal(size=n) for n in lens]
    boots = [0.0, float(rng.normal()), 0.0]
    batch = stub_batch(rew_eps, val_eps, boots)
    adv, targ = compute_gae(batch, gamma=0.99, lam=0.95)
    pos = 0
    for r, v, b in zip(rew_eps, val_eps, boots):
        ref = gae_bruteforce(r, v, b, 0.99, 0.95)
        np.testing.assert_allclose(adv[pos : pos + len(r)], ref, atol=1e-10)
        np.testing.assert_allclose(targ[pos : pos + len(r)], ref + v, atol=1e-10)
        pos += len(r)


def test_advantage_normalization():
    adv = RngHandle(1).normal(size=200) * 3.0 + 5.0
    n = normalize_advantages(adv)
    assert abs(n.mean()) < 1e-6
    assert abs(n.std() - 1.0) < 1e-6
    z = normalize_advantages(np.zeros(7))
    np.testing.assert_array_equal(z, np.zeros(7))


# ---------------------------------------------------------------------------
# collection


def cfg(**kw):
    base = dict(episodes=4, iters=1, max_steps=5, minibatch=64, epochs=2, seed=0)
    base.update(kw)
    return PpoConfig(**base)


def test_collect_zero_episodes():
    env = QuadEnv()
    pol = make_policy(1, 2, RngHandle(0))
    val = make_value(4, RngHandle(1))
    batch = collect_rollouts(pol, val, env, GAIT, ListSampler([env.initial_state()]),
                             cfg(episodes=0), RngHandle(2))
    assert batch.steps == 0 and batch.n_episodes == 0


def test_collect_bookkeeping_and_recorded_quantities():
    env = QuadEnv()
    pol = make_policy(1, 2, RngHandle(0))
    val = make_value(4, RngHandle(1))
    starts = [StateVec(np.array([0.1 * i, 0.0]), env.layout) for i in range(4)]
    sampler = ListSampler(starts)
    batch = collect_rollouts(pol, val, env, GAIT, sampler, cfg(), RngHandle(2))
    assert sampler.calls == 4
    np.testing.assert_array_equal(batch.starts, np.stack([s.values for s in starts]))
    assert batch.steps == 4 * 5 and all(e - s == 5 for s, e in batch.bounds)
    # stored log-probs and values match recomputation under the same params
    lp, _ = gaussian_logprob(pol, batch.obs, batch.act)
    np.testing.assert_allclose(batch.logp, lp, atol=1e-12)
    v, _ = value_forward(val, batch.cobs)
    np.testing.assert_allclose(batch.val, v, atol=1e-12)
    # QuadEnv never terminates, so every episode bootstraps
    assert np.all(batch.bootstrap != 0.0)
    assert not batch.dropped.any() and not batch.success.any()


def test_collect_is_deterministic():
    env = QuadEnv()
    pol = make_policy(1, 2, RngHandle(0))
    val = make_value(4, RngHandle(1))
    sampler = ListSampler([env.initial_state()])
    a = collect_rollouts(pol, val, env, GAIT, sampler, cfg(), RngHandle(9))
    b = collect_rollouts(pol, val, env, GAIT, sampler, cfg(), RngHandle(9))
    np.testing.assert_array_equal(a.act, b.act)
    np.testing.assert_array_equal(a.rew, b.rew)


def test_collect_episodes_end_on_drop():
    env = DriftEnv()
    pol = make_policy(1, 2, RngHandle(0))
    pol.net.weights[-1][:] = 0.0
    pol.net.biases[-1][:] = [0.9, 0.0]  # strong drift: drop on the second step
    pol.log_std[:] = -5.0
    val = make_value(4, RngHandle(1))
    batch = collect_rollouts(pol, val, env, GAIT,
                             ListSampler([env.initial_state()]), cfg(max_steps=50), RngHandle(2))
    assert batch.dropped.all()
    assert np.all(batch.ep_len == 2)
    np.testing.assert_array_equal(batch.bootstrap, np.zeros(4))


def test_collect_rejects_unstable_reset():
    env = DriftEnv()
    bad = StateVec(np.array([1.5, 0.0]), env.layout)
    pol = make_policy(1, 2, RngHandle(0))
    val = make_value(4, RngHandle(1))
    with pytest.raises(ValueError):
        collect_rollouts(pol, val, env, GAIT, ListSampler([bad]), cfg(), RngHandle(2))


def test_collect_goal_task_terminates_on_success_with_bonus():
    env = PlanarGaitEnv()
    task = TaskSpec(kind="goto_root")
    pol = make_policy(env.obs_dim(task), env.action_dim, RngHandle(0))
    pol.net.weights[-1][:] = 0.0
    pol.log_std[:] = -5.0  # near-still hands at the goal orientation succeed at once
    val = make_value(env.priv_dim(task), RngHandle(1))
    batch = collect_rollouts(pol, val, env, task,
                             ListSampler([env.initial_state()]), cfg(max_steps=30), RngHandle(2))
    assert batch.success.all() and not batch.dropped.any()
    assert np.all(batch.ep_len == 1)
    assert np.all(batch.rew > 4.5)  # success bonus dominates
    np.testing.assert_array_equal(batch.bootstrap, np.zeros(4))


def test_collect_calls_insert_hook_each_step():
    env = QuadEnv()
    pol = make_policy(1, 2, RngHandle(0))
    val = make_value(4, RngHandle(1))
    sampler = RecordingSampler([env.initial_state()])
    collect_rollouts(pol, val, env, GAIT, sampler, cfg(), RngHandle(2))
    assert sampler.inserted == 4 * 5


# ---------------------------------------------------------------------------
# updates


def test_zero_advantages_and_zero_entropy_are_a_noop():
    env = QuadEnv()
    pol = make_policy(1, 2, RngHandle(0))
    val = make_value(4, RngHandle(1))
    c = cfg(entropy_coef=0.0)
    batch = collect_rollouts(pol, val, env, GAIT, ListSampler([env.initial_state()]), c, RngHandle(2))
    before_pi = [p.copy() for p in policy_params(pol)]
    before_v = [p.copy() for p in params(val.net)]
    from rxr.nn import adam_init

    ppo_update(pol, val, batch, np.zeros(batch.steps), batch.val.copy(), c,
               adam_init(policy_params(pol), 1e-3), adam_init(params(val.net), 1e-3), RngHandle(3))
    for a, b in zip(policy_params(pol), before_pi):
        np.testing.assert_array_equal(a, b)
    # critic targets equal recorded values; only reduction-order noise remains
    for a, b in zip(params(val.net), before_v):
        np.testing.assert_allclose(a, b, atol=1e-7)


def test_clipped_branch_blocks_actor_gradient():
    env = QuadEnv()
    pol = make_policy(1, 2, RngHandle(0))
    val = make_value(4, RngHandle(1))
    c = cfg(entropy_coef=0.0, epochs=1)
    batch = collect_rollouts(pol, val, env, GAIT, ListSampler([env.initial_state()]), c, RngHandle(2))
    batch.logp = batch.logp - np.log(2.0)  # ratio = 2, far outside the 1.2 clip edge
    adv = np.ones(batch.steps)
    before = [p.copy() for p in policy_params(pol)]
    from rxr.nn import adam_init

    ppo_update(pol, val, batch, adv, batch.val.copy(), c,
               adam_init(policy_params(pol), 1e-2), adam_init(params(val.net), 1e-3), RngHandle(3))
    for a, b in zip(policy_params(pol), before):
        np.testing.assert_array_equal(a, b)


def test_surrogate_gradient_matches_finite_differences():
    pol = make_policy(3, 2, RngHandle(4), hidden=(8,))
    pol.log_std[:] = [-0.5, 0.1]
    r = RngHandle(5)
    obs = r.normal(size=(12, 3))
    act = r.normal(size=(12, 2))
    logp_old, _ = gaussian_logprob(pol, obs, act)
    logp_old = logp_old + r.normal(scale=0.1, size=12)
    adv = r.normal(size=12)

    _, analytic = surrogate_loss(pol, obs, act, logp_old, adv, clip=0.2, entropy_coef=0.01)

    def loss():
        return surrogate_loss(pol, obs, act, logp_old, adv, 0.2, 0.01)[0]

    from test_nn import fd_grads, max_rel_err

    numeric = fd_grads(loss, policy_params(pol))
    assert max_rel_err(analytic, numeric) < 1e-4


def test_actor_update_independent_of_privileged_obs():
    env = QuadEnv()

    def run(perturb):
        pol = make_policy(1, 2, RngHandle(0))
        val = make_value(4, RngHandle(1))
        c = cfg()
        batch = collect_rollouts(pol, val, env, GAIT, ListSampler([env.initial_state()]), c, RngHandle(2))
        if perturb:
            batch.cobs = batch.cobs + 10.0
        adv, targ = compute_gae(batch, c.gamma, c.lam)
        from rxr.nn import adam_init

        ppo_update(pol, val, batch, normalize_advantages(adv), targ, c,
                   adam_init(policy_params(pol), 1e-3), adam_init(params(val.net), 1e-3), RngHandle(3))
        return pol, val

    p0, v0 = run(False)
    p1, v1 = run(True)
    for a, b in zip(policy_params(p0), policy_params(p1)):
        np.testing.assert_array_equal(a, b)
    assert any(not np.array_equal(a, b) for a, b in zip(params(v0.net), params(v1.net)))


# ---------------------------------------------------------------------------
# train loop


def test_train_zero_iterations_returns_untouched_nets():
    env = QuadEnv()
    pol = make_policy(1, 2, RngHandle(0))
    val = make_value(4, RngHandle(1))
    before = [p.copy() for p in policy_params(pol)]
    res = train(env, GAIT, ListSampler([env.initial_state()]), pol, val, cfg(iters=0))
    assert res.curve == []
    for a, b in zip(policy_params(pol), before):
        np.testing.assert_array_equal(a, b)


def test_train_solves_bandit():
    env = QuadEnv()
    pol = make_policy(1, 2, RngHandle(0))
    val = make_value(4, RngHandle(1))
    c = PpoConfig(episodes=128, iters=150, max_steps=1, minibatch=64, epochs=4,
                  entropy_coef=0.003, lr_pi=5e-3, lr_v=1e-2, seed=7)
    res = train(env, GAIT, ListSampler([env.initial_state()]), pol, val, c)
    assert res.curve[-1]["mean_return"] > -0.05
    mu = policy_mean(pol, np.zeros((1, 1)))[0]
    np.testing.assert_allclose(mu, env.a_star, atol=0.1)
    assert res.best_return >= res.curve[-1]["mean_return"] - 1e-12


def test_train_seed_determinism():
    def run():
        env = QuadEnv()
        pol = make_policy(1, 2, RngHandle(0))
        val = make_value(4, RngHandle(1))
        res = train(env, GAIT, ListSampler([env.initial_state()]), pol, val,
                    cfg(iters=6, episodes=8))
        return res.curve, policy_params(pol)

    ca, pa = run()
    cb, pb = run()
    assert ca == cb
    for a, b in zip(pa, pb):
        np.testing.assert_array_equal(a, b)


def test_train_writes_curve_csv(tmp_path):
    env = QuadEnv()
    pol = make_policy(1, 2, RngHandle(0))
    val = make_value(4, RngHandle(1))
    path = tmp_path / "curve.csv"
    res = train(env, GAIT, ListSampler([env.initial_state()]), pol, val,
                cfg(iters=3), log_path=path)
    rows = read_curve(path)
    assert len(rows) == 3
    assert rows[-1]["mean_return"] == pytest.approx(res.curve[-1]["mean_return"])
    assert rows[0]["env_steps"] == 4 * 5
    write_curve(res.curve, path)
    assert read_curve(path) == rows


def test_train_applies_difficulty_schedule():
    env = QuadEnv()
    pol = make_policy(1, 2, RngHandle(0))
    val = make_value(4, RngHandle(1))
    train(env, GAIT, ListSampler([env.initial_state()]), pol, val, cfg(iters=5),
          difficulty=lambda t: min(t / 60.0, 1.0))
    assert env.difficulties[0] == 0.0
    assert env.difficulties == sorted(env.difficulties)
    assert env.difficulties[-1] == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(gamma=1.2)
    with pytest.raises(ValueError):
        PpoConfig(clip=0.0)
    with pytest.raises(ValueError):
        PpoConfig(max_steps=0)
