"""Harvest reset states and demonstration paths from a grown tree.

Paths are extracted best-first: pick a goal node (highest progress, or
nearest a goal orientation), backtrack toward the root, then delete the
visited nodes from a working copy so successive paths are disjoint
suffixes. Reset buffers hold the harvested states with uniform sampling
weight; episodes during training restart from them.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .core import (
    ActionVec,
    FormatError,
    RngHandle,
    StateVec,
    VersionError,
    read_exact,
    read_f64_array,
    read_layout,
    wrap_angle,
    write_f64_array,
    write_layout,
)
from .grrt import TREE_MAGIC, TREE_VERSION, Tree

log = logging.getLogger(__name__)


@dataclass
class Trajectory:
    """Root-side-first chain of (state, action-from-previous) pairs.

    The first pair's action is None. When an extraction is cut by an
    earlier deletion, the chain starts at the highest surviving ancestor
    instead of the root.
    """

    pairs: list[tuple[StateVec, ActionVec | None]]
    ids: list[int]
    total_progress: float

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def states(self) -> list[StateVec]:
        return [s for s, _ in self.pairs]


@dataclass
class ResetBuffer:
    states: list[StateVec]
    provenance: list[tuple[int, int]]  # (tree id, node id)

    def __len__(self) -> int:
        return len(self.states)


def _goal_node(tree: Tree, task, deleted: np.ndarray, rng: RngHandle, score) -> int | None:
    """Pick the next extraction goal among surviving non-root nodes."""
    alive = np.flatnonzero(~deleted)
    alive = alive[alive != 0]
    if alive.size == 0:
        return None
    if score is not None:
        vals = np.array([score(tree.nodes[i]) for i in alive])
        return int(alive[np.argmax(vals)])
    kind = getattr(task, "kind", "gait")
    if kind == "gait":
        vals = np.array([tree.nodes[i].progress for i in alive])
        return int(alive[np.argmax(vals)])
    # goal kinds: node whose object angle is nearest the goal orientation
    if kind == "goto_root":
        g = tree.root.state.values[0]
    else:
        g = rng.uniform(-np.pi, np.pi)
    thetas = tree.points()[alive, 0]
    return int(alive[np.argmin(np.abs(wrap_angle(thetas - g)))])


def extract_paths(tree: Tree, task, p_max: int, rng: RngHandle, score=None) -> list[Trajectory]:
    """Extract up to p_max disjoint root-to-goal suffix paths.

    Deleted nodes are never traversed: a path whose backtrack meets one
    stops below it. Returns fewer than p_max (with a logged warning) when
    the tree runs out of disjoint material.
    """
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    deleted = np.zeros(tree.n, dtype=bool)
    out: list[Trajectory] = []
    for _ in range(p_max):
        gid = _goal_node(tree, task, deleted, rng, score)
        if gid is None:
            log.warning("extract_paths: tree exhausted after %d of %d paths", len(out), p_max)
            break
        chain = []
        nid = gid
        while nid is not None and not deleted[nid]:
            chain.append(nid)
            nid = tree.nodes[nid].parent
        chain.reverse()
        pairs = []
        for k, cid in enumerate(chain):
            node = tree.nodes[cid]
            pairs.append((node.state, None if k == 0 else node.action))
            if cid != 0:
                deleted[cid] = True
        out.append(Trajectory(pairs, chain, tree.nodes[gid].progress))
    return out


def build_reset_buffer(tree: Tree, task, budget: int, rng: RngHandle, tree_id: int = 0) -> ResetBuffer:
    """Harvest up to `budget` reset states from a tree.

    Goal-directed and gait tasks take states from best-first extracted
    paths; the arbitrary-reorientation task uses the whole tree,
    uniformly subsampled when it exceeds the budget.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    kind = getattr(task, "kind", "gait")
    if kind == "arbitrary":
        ids = np.arange(tree.n)
        if tree.n > budget:
            ids = np.sort(rng.permutation(tree.n)[:budget])
        states = [tree.nodes[i].state for i in ids]
        prov = [(tree_id, int(i)) for i in ids]
        return ResetBuffer(states, prov)
    states, prov = [], []
    for traj in extract_paths(tree, task, p_max=tree.n, rng=rng):
        for state, nid in zip(traj.states, traj.ids):
            states.append(state)
            prov.append((tree_id, nid))
            if len(states) >= budget:
                return ResetBuffer(states, prov)
    if not states:
        raise ValueError("tree has no extractable states")
    return ResetBuffer(states, prov)


def sample_reset(buffer: ResetBuffer, rng: RngHandle) -> StateVec:
    if len(buffer) == 0:
        raise ValueError("empty reset buffer")
    return buffer.states[int(rng.integers(0, len(buffer)))]


# ---------------------------------------------------------------------------
# Persistence: same container format as trees, one flat record per state
# (parent slot unused), so buffers and trees share tooling.

def save_buffer(buffer: ResetBuffer, path):
    if len(buffer) == 0:
        raise ValueError("refusing to save an empty buffer")
    layout = buffer.states[0].layout
    with open(path, "wb") as f:
        f.write(TREE_MAGIC)
        f.write(struct.pack("<I", TREE_VERSION))
        f.write(struct.pack("<QI", len(buffer), 0))
        write_layout(f, layout)
        write_f64_array(f, np.zeros(layout.dim))
        for state, (tid, nid) in zip(buffer.states, buffer.provenance):
            f.write(struct.pack("<qqqd", nid, -2 - tid, 0, 0.0))
            write_f64_array(f, state.values)
            f.write(struct.pack("<I", 0))


def load_buffer(path) -> ResetBuffer:
    with open(path, "rb") as f:
        magic = read_exact(f, 4)
        if magic != TREE_MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", read_exact(f, 4))
        if version != TREE_VERSION:
            raise VersionError(f"unsupported buffer version {version}")
        count, _ = struct.unpack("<QI", read_exact(f, 12))
        layout = read_layout(f)
        read_f64_array(f, layout.dim)
        states, prov = [], []
        for _ in range(count):
            nid, tag, _, _ = struct.unpack("<qqqd", read_exact(f, 32))
            if tag > -2:
                raise FormatError("not a reset-buffer file (tree records found)")
            states.append(StateVec(read_f64_array(f, layout.dim), layout))
            prov.append((int(-2 - tag), int(nid)))
            (alen,) = struct.unpack("<I", read_exact(f, 4))
            if alen:
                read_f64_array(f, alen)
    return ResetBuffer(states, prov)
