"""Non-holonomic tree planner over any environment with batched dynamics.

The expansion loop: sample a target state uniformly, find the nearest
tree node under the wrapped weighted metric, test K_max random actions
from it in one batched sweep, keep the stable outcome closest to the
target. Exploration relies only on the environment's step function --
no steering, no rewiring, no goal bias.

The nearest-neighbor index is a kd-tree over an embedding that maps
angular dims to weighted (cos, sin) pairs. The embedding's chord length
lower-bounds the wrapped arc metric, so a ball query at the current
best true distance followed by re-ranking returns the exact argmin; a
linear scan stays both the oracle and the default for small trees.
"""

from __future__ import annotations

import hashlib
import struct
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    ActionVec,
    DimensionError,
    FormatError,
    Layout,
    RngHandle,
    StateVec,
    VersionError,
    distance_to_many,
    read_exact,
    read_f64_array,
    read_layout,
    wrap_values,
    write_f64_array,
    write_layout,
)
from . import envs as _envs

TREE_MAGIC = b"RXRT"
TREE_VERSION = 1


@dataclass
class TreeNode:
    id: int
    state: StateVec
    parent: int | None
    action: ActionVec | None
    depth: int
    progress: float

    def __post_init__(self):
        if (self.parent is None) != (self.action is None):
            raise ValueError("action-from-parent present iff parent present")
        if self.parent is None and self.depth != 0:
            raise ValueError("root must have depth 0")


@dataclass
class GrowStats:
    attempts: int = 0
    added: int = 0
    wall_time: float = 0.0


@dataclass
class GrrtConfig:
    n_max: int = 10_000
    k_max: int = 64
    alpha: float = 0.15
    horizon: int = 50
    seed: int = 0
    max_attempts: int | None = None
    sample_lower: np.ndarray | None = None  # default: env.sample_bounds
    sample_upper: np.ndarray | None = None
    weights: np.ndarray | None = None  # default: env.metric_weights
    stability_hold: str = "sampled"  # or "zero"
    trunc: float = 3.0  # actions truncated at trunc*alpha per component

    def __post_init__(self):
        if self.n_max < 1 or self.k_max < 1 or self.alpha <= 0:
            raise ValueError("need n_max >= 1, k_max >= 1, alpha > 0")
        if self.stability_hold not in ("sampled", "zero"):
            raise ValueError("stability_hold must be 'sampled' or 'zero'")


def _embed(values: np.ndarray, layout: Layout, weights: np.ndarray) -> np.ndarray:
    """Map states to a Euclidean space where distance lower-bounds the metric."""
    values = np.atleast_2d(values)
    sw = np.sqrt(weights)
    ang = layout.angular
    parts = [values[:, ~ang] * sw[~ang]]
    if ang.any():
        a = values[:, ang]
        w = sw[ang]
        parts += [np.cos(a) * w, np.sin(a) * w]
    return np.concatenate(parts, axis=1)


class Tree:
    """Append-only tree with an exact nearest-neighbor index."""

    def __init__(self, root_state: StateVec, root_progress: float,
                 weights: np.ndarray, linear_below: int = 512):
        self.layout = root_state.layout
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (self.layout.dim,):
            raise DimensionError("metric weights must match state dim")
        self.linear_below = int(linear_below)
        self.nodes: list[TreeNode] = [
            TreeNode(0, root_state, None, None, 0, float(root_progress))
        ]
        cap = 1024
        self._pts = np.empty((cap, self.layout.dim))
        self._pts[0] = root_state.values
        self._emb = np.empty((cap, _embed(root_state.values, self.layout, self.weights).shape[1]))
        self._emb[0] = _embed(root_state.values, self.layout, self.weights)[0]
        self._kd: cKDTree | None = None
        self._kd_n = 0
        self.stats = GrowStats()

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def points(self) -> np.ndarray:
        return self._pts[: self.n]

    def add(self, state: StateVec, parent: int, action: ActionVec, progress: float) -> TreeNode:
        if state.layout != self.layout:
            raise DimensionError("node layout mismatch")
        if not 0 <= parent < self.n:
            raise ValueError(f"parent {parent} not in tree")
        node = TreeNode(self.n, state, parent, action,
                        self.nodes[parent].depth + 1, float(progress))
        self.nodes.append(node)
        i = node.id
        if i >= self._pts.shape[0]:
            self._pts = np.concatenate([self._pts, np.empty_like(self._pts)])
            self._emb = np.concatenate([self._emb, np.empty_like(self._emb)])
        self._pts[i] = state.values
        self._emb[i] = _embed(state.values, self.layout, self.weights)[0]
        return node

    def _true_dists(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        return distance_to_many(x, self._pts[idx], self.layout, self.weights)

    def nearest_linear(self, x: StateVec) -> int:
        """Brute-force argmin; ties go to the lowest id (first occurrence)."""
        d = distance_to_many(x.values, self.points(), self.layout, self.weights)
        return int(np.argmin(d))

    def nearest(self, x: StateVec) -> int:
        if self.n == 0:
            raise ValueError("empty tree")
        if x.layout != self.layout:
            raise DimensionError("query layout mismatch")
        if self.n < self.linear_below:
            return self.nearest_linear(x)
        if self._kd is None or (self.n - self._kd_n) > self._kd_n:
            self._kd = cKDTree(self._emb[: self.n])
            self._kd_n = self.n
        e = _embed(x.values, self.layout, self.weights)[0]
        # current best: kd candidate by embedding plus exact scan of the tail
        _, i_kd = self._kd.query(e)
        cand = [int(i_kd)]
        if self._kd_n < self.n:
            tail = np.arange(self._kd_n, self.n)
            cand.append(int(tail[np.argmin(self._true_dists(x.values, tail))]))
        cand = np.array(sorted(set(cand)))
        best = cand[np.argmin(self._true_dists(x.values, cand))]
        t_best = float(self._true_dists(x.values, np.array([best]))[0])
        # every node truly closer than t_best embeds within t_best of the query
        ball = self._kd.query_ball_point(e, t_best + 1e-12)
        ids = np.unique(np.concatenate([np.asarray(ball, dtype=int), cand]))
        d = self._true_dists(x.values, ids)
        order = np.lexsort((ids, d))  # distance first, then id
        return int(ids[order[0]])


def sample_target(bounds, rng: RngHandle, layout: Layout | None = None) -> StateVec | np.ndarray:
    """Uniform per-dim sample within bounds; returns a StateVec when layout given."""
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    if lo.shape != hi.shape or np.any(lo > hi):
        raise ValueError("malformed bounds")
    v = rng.uniform(lo, hi)
    if layout is None:
        return v
    return StateVec(wrap_values(v, layout), layout)


def nearest(tree: Tree, x: StateVec) -> int:
    return tree.nearest(x)


def expand(tree: Tree, node_id: int, x_sample: StateVec, config: GrrtConfig,
           env, rng: RngHandle) -> TreeNode | None:
    """Test k_max random actions from one node; keep the stable outcome
    closest to the sample. Returns None when no outcome is stable."""
    node = tree.nodes[node_id]
    k = config.k_max
    lim = config.trunc * config.alpha
    A = np.clip(rng.normal(config.alpha, size=(k, env.action_dim)), -lim, lim)
    S = np.repeat(node.state.values[None, :], k, axis=0)
    N, dropped = env.step_batch(S, A)
    hold = A if config.stability_hold == "sampled" else np.zeros_like(A)
    ok = ~dropped
    if ok.any():
        ok[ok] = _envs.is_stable_batch(env, N[ok], hold[ok], config.horizon)
    if not ok.any():
        return None
    idx = np.flatnonzero(ok)
    d = distance_to_many(x_sample.values, N[idx], tree.layout, tree.weights)
    pick = int(idx[np.argmin(d)])
    state = StateVec(N[pick], tree.layout)
    return tree.add(state, node_id, ActionVec(A[pick]), env.progress(state))


def grow(config: GrrtConfig, env, task=None) -> Tree:
    """Run expansions until n_max nodes (or the attempt budget) is reached.

    Planning is reward-free; `task` is accepted for interface symmetry with
    the training entry points but does not influence growth.
    """
    rng = RngHandle(config.seed, stream=0)
    s0 = env.initial_state()
    if not env.stable(s0):
        raise ValueError("initial state is not stable")
    weights = env.metric_weights if config.weights is None else np.asarray(config.weights, float)
    lo, hi = env.sample_bounds
    if config.sample_lower is not None:
        lo = np.asarray(config.sample_lower, dtype=float)
    if config.sample_upper is not None:
        hi = np.asarray(config.sample_upper, dtype=float)
    tree = Tree(s0, env.progress(s0), weights)
    t0 = time.perf_counter()
    attempts = 0
    while tree.n < config.n_max:
        if config.max_attempts is not None and attempts >= config.max_attempts:
            break
        x = sample_target((lo, hi), rng, env.layout)
        expand(tree, tree.nearest(x), x, config, env, rng)
        attempts += 1
    tree.stats = GrowStats(attempts=attempts, added=tree.n - 1,
                           wall_time=time.perf_counter() - t0)
    return tree


def coverage(tree: Tree) -> float:
    """Best task progress over the whole tree (0 for a fresh root)."""
    if tree.n == 0:
        raise ValueError("empty tree")
    return float(max(n.progress for n in tree.nodes))


def tree_hash(tree: Tree) -> str:
    h = hashlib.sha256()
    for n in tree.nodes:
        h.update(struct.pack("<qqq", n.id, -1 if n.parent is None else n.parent, n.depth))
        h.update(np.float64(n.progress).tobytes())
        h.update(np.ascontiguousarray(n.state.values, dtype="<f8").tobytes())
        if n.action is not None:
            h.update(np.ascontiguousarray(n.action.values, dtype="<f8").tobytes())
    return h.hexdigest()


def save_tree(tree: Tree, path):
    with open(path, "wb") as f:
        f.write(TREE_MAGIC)
        f.write(struct.pack("<I", TREE_VERSION))
        f.write(struct.pack("<QI", tree.n, 0 if tree.n < 2 else tree.nodes[1].action.dim))
        write_layout(f, tree.layout)
        write_f64_array(f, tree.weights)
        for n in tree.nodes:
            f.write(struct.pack("<qqqd", n.id, -1 if n.parent is None else n.parent,
                                n.depth, n.progress))
            write_f64_array(f, n.state.values)
            if n.action is None:
                f.write(struct.pack("<I", 0))
            else:
                f.write(struct.pack("<I", n.action.dim))
                write_f64_array(f, n.action.values)


def load_tree(path) -> Tree:
    with open(path, "rb") as f:
        magic = read_exact(f, 4)
        if magic != TREE_MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", read_exact(f, 4))
        if version != TREE_VERSION:
            raise VersionError(f"unsupported tree version {version}")
        count, _adim = struct.unpack("<QI", read_exact(f, 12))
        layout = read_layout(f)
        weights = read_f64_array(f, layout.dim)
        tree = None
        for i in range(count):
            nid, parent, depth, progress = struct.unpack("<qqqd", read_exact(f, 32))
            state = StateVec(read_f64_array(f, layout.dim), layout)
            (alen,) = struct.unpack("<I", read_exact(f, 4))
            action = ActionVec(read_f64_array(f, alen)) if alen else None
            if i == 0:
                if parent != -1 or nid != 0:
                    raise FormatError("first record must be the root")
                tree = Tree(state, progress, weights)
            else:
                got = tree.add(state, parent, action, progress)
                if got.id != nid or got.depth != depth:
                    raise FormatError("node records out of order or corrupted")
        if tree is None:
            raise FormatError("tree file contains no nodes")
    return tree


def trees_equal(a: Tree, b: Tree) -> bool:
    if a.n != b.n or a.layout != b.layout or not np.array_equal(a.weights, b.weights):
        return False
    for x, y in zip(a.nodes, b.nodes):
        if (x.id, x.parent, x.depth) != (y.id, y.parent, y.depth):
            return False
        if x.progress != y.progress or not np.array_equal(x.state.values, y.state.values):
            return False
        if (x.action is None) != (y.action is None):
            return False
        if x.action is not None and not np.array_equal(x.action.values, y.action.values):
            return False
    return True
