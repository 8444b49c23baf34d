from __future__ import annotations

import math

import numpy as np
import pytest

from rxr.core import (
    ActionVec,
    FormatError,
    Layout,
    RngHandle,
    StateVec,
    TruncatedError,
    VersionError,
    state_distance,
)
from rxr.envs import PlanarGaitEnv, is_stable
from rxr.grrt import (
    GrrtConfig,
    Tree,
    coverage,
    expand,
    grow,
    load_tree,
    nearest,
    sample_target,
    save_tree,
    tree_hash,
    trees_equal,
)


class FreeEnv:
    """Test double: 2-dim integrator, every state stable."""

    def __init__(self, stable_pred=None):
        self.layout = Layout.of([("linear", -100, 100), ("linear", -100, 100)])
        self.action_dim = 2
        self._pred = stable_pred

    @property
    def dim(self):
        return 2

    def initial_state(self):
        return StateVec(np.zeros(2), self.layout)

    @property
    def metric_weights(self):
        return np.ones(2)

    @property
    def sample_bounds(self):
        return -np.ones(2), np.ones(2)

    def stable_batch(self, S):
        S = np.atleast_2d(np.asarray(S, dtype=float))
        if self._pred is None:
            return np.ones(S.shape[0], dtype=bool)
        return self._pred(S)

    def stable(self, s):
        return bool(self.stable_batch(s.values[None, :])[0])

    def step_batch(self, S, A):
        N = np.clip(S + A, -100, 100)
        return N, ~self.stable_batch(N)

    def progress_batch(self, S):
        return np.atleast_2d(S)[:, 0]

    def progress(self, s):
        return float(s.values[0])


def make_random_tree(n, seed=0, layout=None):
    rng = RngHandle(seed)
    layout = layout or Layout.of(
        [("angular", 0, 0), ("angular", 0, 0), ("linear", -2, 2), ("linear", -5, 5)]
    )
    lo = np.array([-math.pi, -math.pi, -2.0, -5.0])
    hi = np.array([math.pi, math.pi, 2.0, 5.0])
    w = np.array([1.0, 0.3, 2.0, 0.7])
    root = StateVec(rng.uniform(lo, hi), layout)
    tree = Tree(root, 0.0, w)
    for i in range(1, n):
        s = StateVec(rng.uniform(lo, hi), layout)
        tree.add(s, int(rng.integers(0, i)), ActionVec(np.zeros(1)), float(rng.uniform()))
    return tree, (lo, hi)


# ---------------------------------------------------------------------------
# sample_target


def test_sample_target_degenerate_bounds():
    pt = np.array([0.3, -1.2])
    s = sample_target((pt, pt), RngHandle(0))
    np.testing.assert_array_equal(s, pt)


def test_sample_target_range_and_determinism():
    lo, hi = np.array([-1.0, 0.0]), np.array([1.0, 0.5])
    rng = RngHandle(9)
    xs = np.stack([sample_target((lo, hi), rng) for _ in range(10_000)])
    assert np.all(xs >= lo) and np.all(xs <= hi)
    a = sample_target((lo, hi), RngHandle(4))
    b = sample_target((lo, hi), RngHandle(4))
    np.testing.assert_array_equal(a, b)


def test_sample_target_rejects_bad_bounds():
    with pytest.raises(ValueError):
        sample_target((np.array([1.0]), np.array([0.0])), RngHandle(0))


# ---------------------------------------------------------------------------
# nearest neighbor


def test_nearest_single_node_is_root():
    tree, _ = make_random_tree(1)
    q = StateVec(np.zeros(4), tree.layout)
    assert nearest(tree, q) == 0


def test_nearest_exact_hit():
    tree, _ = make_random_tree(50, seed=3)
    q = tree.nodes[17].state
    assert nearest(tree, q) == 17


def test_nearest_tie_breaks_to_lowest_id():
    tree, _ = make_random_tree(5, seed=1)
    dup = tree.nodes[2].state
    tree.add(dup, 0, ActionVec(np.zeros(1)), 0.0)  # identical state, higher id
    assert nearest(tree, dup) == 2


def test_kd_index_matches_linear_scan():
    tree, (lo, hi) = make_random_tree(1000, seed=5)
    assert tree.n >= tree.linear_below  # force the kd path
    rng = RngHandle(6)
    for _ in range(1000):
        q = StateVec(rng.uniform(lo, hi), tree.layout)
        assert tree.nearest(q) == tree.nearest_linear(q)


def test_kd_index_matches_linear_scan_while_growing():
    tree, (lo, hi) = make_random_tree(520, seed=8)
    rng = RngHandle(7)
    for i in range(300):  # interleave queries with appends to exercise the tail
        q = StateVec(rng.uniform(lo, hi), tree.layout)
        assert tree.nearest(q) == tree.nearest_linear(q)
        s = StateVec(rng.uniform(lo, hi), tree.layout)
        tree.add(s, 0, ActionVec(np.zeros(1)), 0.0)


def test_nearest_respects_angular_wrap():
    layout = Layout.of([("angular", 0, 0)])
    tree = Tree(StateVec(np.array([3.1]), layout), 0.0, np.ones(1))
    tree.add(StateVec(np.array([0.0]), layout), 0, ActionVec(np.zeros(1)), 0.0)
    q = StateVec(np.array([-3.1]), layout)  # wraps to within 0.084 of node 0
    assert tree.nearest(q) == 0


# ---------------------------------------------------------------------------
# expand


def test_expand_no_stable_outcome_returns_none():
    env = FreeEnv(stable_pred=lambda S: np.zeros(S.shape[0], dtype=bool))
    root_env = FreeEnv()  # root must be stable to build the tree
    tree = Tree(root_env.initial_state(), 0.0, root_env.metric_weights)
    got = expand(tree, 0, root_env.initial_state(), GrrtConfig(k_max=1), env, RngHandle(0))
    assert got is None
    assert tree.n == 1


def test_expand_k1_adds_any_stable_outcome():
    env = FreeEnv()
    tree = Tree(env.initial_state(), 0.0, env.metric_weights)
    target = StateVec(np.array([50.0, 50.0]), env.layout)  # far away on purpose
    got = expand(tree, 0, target, GrrtConfig(k_max=1, alpha=0.1), env, RngHandle(2))
    assert got is not None and got.id == 1 and got.parent == 0


def test_expand_picks_min_distance_candidate():
    env = FreeEnv()
    tree = Tree(env.initial_state(), 0.0, env.metric_weights)
    cfg = GrrtConfig(k_max=3, alpha=0.5)
    target = StateVec(np.array([0.7, -0.2]), env.layout)
    # oracle: replay the exact action draws and recompute the argmin externally
    rng_oracle = RngHandle(11)
    A = np.clip(rng_oracle.normal(cfg.alpha, size=(3, 2)), -1.5, 1.5)
    dists = [
        state_distance(StateVec(a, env.layout), target, env.metric_weights) for a in A
    ]
    want = int(np.argmin(dists))
    got = expand(tree, 0, target, cfg, env, RngHandle(11))
    np.testing.assert_array_equal(got.action.values, A[want])
    np.testing.assert_array_equal(got.state.values, A[want])


def test_expand_responds_to_stability_filter():
    # only the half-plane x0 <= 0 is stable: chosen candidate must respect it
    env = FreeEnv(stable_pred=lambda S: S[:, 0] <= 0)
    tree = Tree(env.initial_state(), 0.0, env.metric_weights)
    target = StateVec(np.array([90.0, 0.0]), env.layout)  # pulls toward unstable side
    rng = RngHandle(13)
    for _ in range(20):
        node = expand(tree, 0, target, GrrtConfig(k_max=8, alpha=0.3), env, rng)
        if node is not None:
            assert node.state.values[0] <= 0


# ---------------------------------------------------------------------------
# grow


def test_grow_n_max_one_returns_root_only():
    env = PlanarGaitEnv()
    tree = grow(GrrtConfig(n_max=1, seed=0), env)
    assert tree.n == 1 and tree.stats.attempts == 0


def test_grow_is_seed_reproducible():
    env = PlanarGaitEnv()
    cfg = GrrtConfig(n_max=100, k_max=16, seed=42)
    h1 = tree_hash(grow(cfg, env))
    h2 = tree_hash(grow(cfg, env))
    assert h1 == h2
    h3 = tree_hash(grow(GrrtConfig(n_max=100, k_max=16, seed=43), env))
    assert h1 != h3


def test_grow_respects_attempt_budget():
    env = PlanarGaitEnv()
    tree = grow(GrrtConfig(n_max=10_000, k_max=4, seed=1, max_attempts=50), env)
    assert tree.stats.attempts == 50
    assert tree.n <= 51


def test_grow_rejects_unstable_initial_state():
    env = FreeEnv(stable_pred=lambda S: np.zeros(S.shape[0], dtype=bool))
    with pytest.raises(ValueError):
        grow(GrrtConfig(n_max=10), env)


def test_grow_tree_replays_exactly_and_nodes_pass_stability():
    env = PlanarGaitEnv()
    cfg = GrrtConfig(n_max=60, k_max=16, seed=7)
    tree = grow(cfg, env)
    assert tree.n == 60
    for node in tree.nodes[1:]:
        parent = tree.nodes[node.parent]
        N, _ = env.step_batch(parent.state.values[None, :], node.action.values[None, :])
        np.testing.assert_array_equal(N[0], node.state.values)
        assert is_stable(env, node.state, node.action, cfg.horizon)
        assert node.depth == parent.depth + 1


def test_grow_with_zero_hold_flag():
    env = PlanarGaitEnv()
    cfg = GrrtConfig(n_max=30, k_max=16, seed=7, stability_hold="zero")
    tree = grow(cfg, env)
    zero = ActionVec(np.zeros(env.action_dim))
    for node in tree.nodes[1:]:
        assert is_stable(env, node.state, zero, cfg.horizon)


def test_more_candidates_reach_more_coverage():
    env = PlanarGaitEnv()
    meds = []
    for k in (1, 16):
        covs = [
            coverage(grow(GrrtConfig(n_max=10_000, k_max=k, seed=s, max_attempts=150), env))
            for s in range(3)
        ]
        meds.append(np.median(covs))
    assert meds[1] >= meds[0]


# ---------------------------------------------------------------------------
# coverage


def test_coverage_root_only_zero():
    env = PlanarGaitEnv()
    tree = Tree(env.initial_state(), env.progress(env.initial_state()), env.metric_weights)
    assert coverage(tree) == 0.0


def test_coverage_hand_built_chain():
    env = FreeEnv()
    tree = Tree(env.initial_state(), 0.0, env.metric_weights)
    vals = [0.3, 0.2, 0.7, 0.5]
    for i, p in enumerate(vals):
        tree.add(StateVec(np.array([p, 0.0]), env.layout), i, ActionVec(np.zeros(2)), p)
    assert coverage(tree) == pytest.approx(0.7)


def test_coverage_monotone_while_growing():
    env = PlanarGaitEnv()
    rng = RngHandle(3)
    cfg = GrrtConfig(k_max=8)
    tree = Tree(env.initial_state(), 0.0, env.metric_weights)
    lo, hi = env.sample_bounds
    prev = coverage(tree)
    for _ in range(80):
        x = sample_target((lo, hi), rng, env.layout)
        expand(tree, tree.nearest(x), x, cfg, env, rng)
        now = coverage(tree)
        assert now >= prev
        prev = now


# ---------------------------------------------------------------------------
# persistence


def test_tree_roundtrip_root_only(tmp_path):
    env = PlanarGaitEnv()
    tree = Tree(env.initial_state(), 0.0, env.metric_weights)
    p = tmp_path / "t.rxrt"
    save_tree(tree, p)
    assert trees_equal(tree, load_tree(p))


def test_tree_roundtrip_large(tmp_path):
    tree, _ = make_random_tree(1000, seed=12)
    p = tmp_path / "t.rxrt"
    save_tree(tree, p)
    back = load_tree(p)
    assert trees_equal(tree, back)
    assert tree_hash(tree) == tree_hash(back)


def test_tree_roundtrip_real_grow(tmp_path):
    env = PlanarGaitEnv()
    tree = grow(GrrtConfig(n_max=40, k_max=8, seed=2), env)
    p = tmp_path / "t.rxrt"
    save_tree(tree, p)
    assert trees_equal(tree, load_tree(p))


def test_tree_bad_magic(tmp_path):
    p = tmp_path / "bad.rxrt"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FormatError):
        load_tree(p)


def test_tree_bad_version(tmp_path):
    tree, _ = make_random_tree(3)
    p = tmp_path / "t.rxrt"
    save_tree(tree, p)
    raw = bytearray(p.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    p.write_bytes(bytes(raw))
    with pytest.raises(VersionError):
        load_tree(p)


def test_tree_truncated(tmp_path):
    tree, _ = make_random_tree(50)
    p = tmp_path / "t.rxrt"
    save_tree(tree, p)
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(TruncatedError):
        load_tree(p)
