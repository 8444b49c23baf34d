"""Desk-scale environments with hard exploration structure.

Two deterministic environments share one interface:

* PlanarGaitEnv -- m fingers on arc segments around a fixed-center disc.
  Fingers in contact move in concert with the disc (rigid contact); arcs
  are limited, so sustained rotation requires finger gaiting: breaking a
  contact, swinging the finger back, and re-making contact while the
  other fingers hold the object. Re-making contact must be gentle: a
  radial step larger than touch_max at the moment of contact knocks the
  object out of the grasp entirely.
* CorridorEnv -- an n-dim point robot restricted to narrow axis-aligned
  slabs around a bent spine. Motion normal to the spine is attenuated,
  so the bends cannot be cut; leaving the slabs drops the episode.

Both expose scalar `step` plus `step_batch`/`is_stable_batch` fast paths
operating on (B, dim) arrays; the scalar path delegates to the batch one
so the two can never disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    ActionVec,
    DimensionError,
    Layout,
    ObservationVec,
    RngHandle,
    StateVec,
    diff_values,
    wrap_angle,
)

ACC_LIM = 1.0e9  # accumulated-rotation coordinate is effectively unclamped

KINDS = ("gait", "goto_root", "arbitrary")


class DroppedStateError(RuntimeError):
    """Stepping from a dropped state; episodes must reset instead."""


@dataclass(frozen=True)
class TaskSpec:
    """What the reward cares about.

    kind='gait' rewards progress velocity; the goal kinds implement the
    clipped goal-distance progress reward with a success bonus. goal is
    required exactly for kind='arbitrary'; 'goto_root' targets the
    environment's root (initial) object angle implicitly.
    """

    kind: str = "gait"
    goal: float | None = None
    c: float = -10.0
    epsilon: float = 0.05
    c_success: float = 5.0
    theta_thresh: float = 0.1
    qdot_thresh: float = 0.1
    omega_thresh: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if (self.goal is not None) != (self.kind == "arbitrary"):
            raise ValueError("goal must be present iff kind == 'arbitrary'")
        if not (self.c < 0 and self.epsilon > 0 and self.c_success > 0):
            raise ValueError("reward config must satisfy c < 0, epsilon > 0, c_success > 0")


@dataclass(frozen=True)
class StepResult:
    state: StateVec
    obs: ObservationVec
    reward: float
    dropped: bool
    success: bool


def sample_goal(rng: RngHandle) -> float:
    """Uniform goal angle in [-pi, pi)."""
    return float(rng.uniform(-math.pi, math.pi))


def _pairs(m: int):
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


class PlanarGaitEnv:
    """Finger-gaiting analogue: state [theta, q_1..m, r_1..m, acc].

    theta is the (wrapped) object angle, q the finger arc angles, r the
    radial coordinates (contact iff r_i <= r_contact), acc the unwrapped
    accumulated rotation. Contacting fingers are rigidly attached: all of
    them (and the object) rotate by the mean of their commanded deltas.
    A contacting finger that would be dragged past +-q_lim breaks off
    instead (r pushed above the contact threshold) and stops contributing.
    """

    name = "planar_gait"

    def __init__(
        self,
        m: int = 3,
        q_lim: float = 0.6,
        spread_min: float = math.pi / 2,
        delta_max: float = 0.05,
        dt: float = 1.0,
        v_clip: float = 0.1,
        lam_a: float = 0.001,
        r_contact: float = 0.5,
        r_broken: float = 0.75,
        r_step_max: float = 0.25,
        r_init: float = 0.2,
        touch_max: float = 0.12,
        acc_span: float = 4 * math.pi,
        obs_mask: np.ndarray | None = None,
    ):
        if m < 2:
            raise ValueError("need at least 2 fingers")
        self.m = m
        self.q_lim = float(q_lim)
        self.spread_min = float(spread_min)
        self.delta_max = float(delta_max)
        self.dt = float(dt)
        self.v_clip = float(v_clip)
        self.lam_a = float(lam_a)
        self.r_contact = float(r_contact)
        self.r_broken = float(r_broken)
        self.r_step_max = float(r_step_max)
        self.r_init = float(r_init)
        self.touch_max = float(touch_max)
        self.acc_span = float(acc_span)
        self.obs_mask = None if obs_mask is None else np.asarray(obs_mask, dtype=bool)
        self.base = 2.0 * math.pi * np.arange(m) / m  # finger anchor angles
        self.root_theta = 0.0
        self.layout = Layout(
            angular=np.array([True] + [False] * (2 * m + 1)),
            lower=np.array([0.0] + [-self.q_lim] * m + [0.0] * m + [-ACC_LIM]),
            upper=np.array([0.0] + [self.q_lim] * m + [1.0] * m + [ACC_LIM]),
        )
        self._pair_idx = np.array(_pairs(m))

    # ----- layout helpers -------------------------------------------------
    @property
    def dim(self) -> int:
        return 2 * self.m + 2

    @property
    def action_dim(self) -> int:
        return 2 * self.m

    def split(self, S: np.ndarray):
        """View (B, dim) as (theta, q, r, acc)."""
        m = self.m
        return S[..., 0], S[..., 1 : 1 + m], S[..., 1 + m : 1 + 2 * m], S[..., 1 + 2 * m]

    def initial_state(self) -> StateVec:
        v = np.zeros(self.dim)
        v[1 + self.m : 1 + 2 * self.m] = self.r_init
        return StateVec(v, self.layout)

    @property
    def metric_weights(self) -> np.ndarray:
        m = self.m
        return np.concatenate([[1.0], np.ones(m), np.full(m, 0.5), [1.0]])

    @property
    def sample_bounds(self):
        m = self.m
        lo = np.concatenate([[-math.pi], -self.q_lim * np.ones(m), np.zeros(m), [-self.acc_span]])
        hi = np.concatenate([[math.pi], self.q_lim * np.ones(m), np.ones(m), [self.acc_span]])
        return lo, hi

    def progress_batch(self, S: np.ndarray) -> np.ndarray:
        return S[..., 1 + 2 * self.m]

    def progress(self, s: StateVec) -> float:
        return float(self.progress_batch(s.values))

    # ----- dynamics -------------------------------------------------------
    def contacts_batch(self, S: np.ndarray) -> np.ndarray:
        _, _, r, _ = self.split(S)
        return r <= self.r_contact

    def stable_batch(self, S: np.ndarray) -> np.ndarray:
        """>=2 contacts and some contacting pair spread >= spread_min."""
        _, q, _, _ = self.split(S)
        con = self.contacts_batch(S)
        pos = self.base + q
        i, j = self._pair_idx[:, 0], self._pair_idx[:, 1]
        spread = np.abs(wrap_angle(pos[..., i] - pos[..., j]))
        ok_pair = con[..., i] & con[..., j] & (spread >= self.spread_min)
        return (con.sum(axis=-1) >= 2) & ok_pair.any(axis=-1)

    def stable(self, s: StateVec) -> bool:
        return bool(self.stable_batch(s.values[None, :])[0])

    def step_batch(self, S: np.ndarray, A: np.ndarray):
        """Raw dynamics on (B, dim)/(B, action_dim); returns (next, dropped)."""
        S = np.asarray(S, dtype=float)
        A = np.asarray(A, dtype=float)
        if S.shape[-1] != self.dim or A.shape[-1] != self.action_dim:
            raise DimensionError("bad state/action width")
        m = self.m
        th, q, r, acc = self.split(S)
        dq = np.clip(A[:, :m], -self.delta_max, self.delta_max)
        dr = np.clip(A[:, m:], -self.r_step_max, self.r_step_max)

        contact = r <= self.r_contact
        active = contact.copy()
        dth = np.zeros(S.shape[0])
        # drop contacting fingers that would be dragged past the arc limit,
        # recomputing the concerted rotation until the set is consistent
        for _ in range(m + 1):
            cnt = active.sum(axis=1)
            dth = np.where(cnt > 0, (dq * active).sum(axis=1) / np.maximum(cnt, 1), 0.0)
            viol = active & (np.abs(q + dth[:, None]) > self.q_lim + 1e-12)
            if not viol.any():
                break
            active &= ~viol
        forced = contact & ~active

        q_next = np.clip(q + dq, -self.q_lim, self.q_lim)  # free-finger motion
        q_next = np.where(active, q + dth[:, None], q_next)
        q_next = np.where(forced, q, q_next)

        r_cand = np.clip(r + dr, 0.0, 1.0)
        making = (r > self.r_contact) & (r_cand <= self.r_contact)
        blocked = making & (np.abs(q_next) >= self.q_lim - 1e-12)
        slam = making & ~blocked & (np.abs(dr) > self.touch_max)
        r_next = np.where(blocked, r, r_cand)
        r_next = np.where(forced, np.maximum(r, self.r_broken), r_next)
        # a hard touch knocks the object out of the grasp: every contact severs
        knocked = slam.any(axis=1)
        if knocked.any():
            sever = knocked[:, None] & (r_next <= self.r_contact)
            r_next = np.where(sever, np.maximum(r_next, self.r_broken), r_next)
            r_next = np.where(knocked[:, None] & slam, self.r_contact + 0.05, r_next)

        nxt = np.empty_like(S)
        nxt[:, 0] = wrap_angle(th + dth)
        nxt[:, 1 : 1 + m] = q_next
        nxt[:, 1 + m : 1 + 2 * m] = r_next
        nxt[:, 1 + 2 * m] = acc + dth
        return nxt, ~self.stable_batch(nxt)

    # ----- observations / rewards -----------------------------------------
    def obs_dim(self, task: TaskSpec) -> int:
        extra = {"gait": 0, "goto_root": 2, "arbitrary": 4}[task.kind]
        return 3 * self.m + extra

    def observe_batch(self, S: np.ndarray, setpoints: np.ndarray, task: TaskSpec) -> np.ndarray:
        th, q, _, _ = self.split(S)
        con = self.contacts_batch(S).astype(float)
        cols = [q, setpoints, con]
        if task.kind == "goto_root":
            cols += [np.cos(th)[:, None], np.sin(th)[:, None]]
        elif task.kind == "arbitrary":
            g = task.goal
            cols += [
                np.cos(th)[:, None],
                np.sin(th)[:, None],
                np.full((S.shape[0], 1), math.cos(g)),
                np.full((S.shape[0], 1), math.sin(g)),
            ]
        out = np.concatenate(cols, axis=1)
        if self.obs_mask is not None:
            if self.obs_mask.shape != (out.shape[1],):
                raise DimensionError("obs_mask length != observation dim")
            out = out * self.obs_mask
        return out

    def observe(self, s: StateVec, setpoints: np.ndarray | None, task: TaskSpec) -> ObservationVec:
        if setpoints is None:
            setpoints = s.values[1 : 1 + self.m]
        sp = np.asarray(setpoints, dtype=float)
        if sp.shape != (self.m,):
            raise DimensionError("setpoints must have joint dimension")
        vals = self.observe_batch(s.values[None, :], sp[None, :], task)[0]
        mask = np.ones(vals.shape[0], dtype=bool) if self.obs_mask is None else self.obs_mask
        return ObservationVec(vals, mask)

    def goal_angle(self, task: TaskSpec) -> float:
        if task.kind == "arbitrary":
            return float(task.goal)
        if task.kind == "goto_root":
            return self.root_theta
        raise ValueError("gait task has no goal angle")

    def goal_delta(self, theta, task: TaskSpec):
        return np.abs(wrap_angle(theta - self.goal_angle(task)))

    def reward_gait(self, prev: StateVec, nxt: StateVec) -> float:
        dacc = nxt.values[-1] - prev.values[-1]
        dq = nxt.values[1 : 1 + self.m] - prev.values[1 : 1 + self.m]
        vel = np.clip(dacc / self.dt, -self.v_clip, self.v_clip)
        return float(vel - self.lam_a * np.sum(dq * dq))

    def reward_goal(self, prev: StateVec, nxt: StateVec, task: TaskSpec, success: bool) -> float:
        d_prev = self.goal_delta(prev.values[0], task)
        d_now = self.goal_delta(nxt.values[0], task)
        prog = np.clip(d_now - d_prev, -task.epsilon, task.epsilon)
        return float(task.c * prog + (task.c_success if success else 0.0))

    def is_success(self, s: StateVec, sdot: np.ndarray, task: TaskSpec) -> bool:
        if task.kind == "gait":
            raise ValueError("success is undefined for the gait task")
        sdot = np.asarray(sdot, dtype=float)
        d = self.goal_delta(s.values[0], task)
        qdot = np.linalg.norm(sdot[1 : 1 + self.m])
        omega = abs(float(sdot[1 + 2 * self.m]))
        return bool(d < task.theta_thresh and qdot < task.qdot_thresh and omega < task.omega_thresh)

    def success_batch(self, S: np.ndarray, Sdot: np.ndarray, task: TaskSpec) -> np.ndarray:
        d = self.goal_delta(S[:, 0], task)
        qdot = np.linalg.norm(Sdot[:, 1 : 1 + self.m], axis=1)
        omega = np.abs(Sdot[:, 1 + 2 * self.m])
        return (d < task.theta_thresh) & (qdot < task.qdot_thresh) & (omega < task.omega_thresh)

    def reward_batch(self, P: np.ndarray, N: np.ndarray, task: TaskSpec, success: np.ndarray) -> np.ndarray:
        if task.kind == "gait":
            dacc = N[:, -1] - P[:, -1]
            dq = N[:, 1 : 1 + self.m] - P[:, 1 : 1 + self.m]
            return np.clip(dacc / self.dt, -self.v_clip, self.v_clip) - self.lam_a * np.sum(dq * dq, axis=1)
        d_prev = self.goal_delta(P[:, 0], task)
        d_now = self.goal_delta(N[:, 0], task)
        prog = np.clip(d_now - d_prev, -task.epsilon, task.epsilon)
        return task.c * prog + task.c_success * success

    # ----- privileged critic features --------------------------------------
    def priv_dim(self, task: TaskSpec) -> int:
        extra = {"gait": 0, "goto_root": 1, "arbitrary": 3}[task.kind]
        return 2 + 4 * self.m + 1 + extra

    def priv_batch(self, S: np.ndarray, Sdot: np.ndarray, task: TaskSpec) -> np.ndarray:
        th, q, r, _ = self.split(S)
        m = self.m
        cols = [
            np.cos(th)[:, None],
            np.sin(th)[:, None],
            q,
            r,
            Sdot[:, 1 : 1 + m],
            Sdot[:, 1 + 2 * m][:, None],
            self.contacts_batch(S).astype(float),
        ]
        if task.kind != "gait":
            cols.append(self.goal_delta(th, task)[:, None])
        if task.kind == "arbitrary":
            g = self.goal_angle(task)
            cols.append(np.full((S.shape[0], 1), math.cos(g)))
            cols.append(np.full((S.shape[0], 1), math.sin(g)))
        return np.concatenate(cols, axis=1)

    def with_difficulty(self, d: float) -> "PlanarGaitEnv":
        """Scale the stability requirement: d=0 waives the spread check, d=1 is nominal."""
        e = self.clone()
        e.spread_min = float(d) * self.spread_min
        return e

    def clone(self) -> "PlanarGaitEnv":
        e = object.__new__(PlanarGaitEnv)
        e.__dict__.update(self.__dict__)
        return e


class CorridorEnv:
    """Point robot in [0,1]^n restricted to slabs around a bent spine.

    Segment j runs along axis j from 0.1 to 0.9; unused axes sit at 0.5.
    The stable set is the union of axis-aligned slabs of half-width w
    around the segments. Actions are clipped per component to delta_max,
    then components normal to the current segment's direction are scaled
    by `attenuation` -- the corner cannot be cut in one step.
    """

    name = "corridor"

    def __init__(
        self,
        n: int = 6,
        bends: int = 3,
        w: float = 0.05,
        delta_max: float = 0.05,
        dt: float = 1.0,
        v_clip: float = 0.1,
        lam_a: float = 0.001,
        attenuation: float = 0.1,
        lo: float = 0.1,
        hi: float = 0.9,
        obs_mask: np.ndarray | None = None,
    ):
        self.n = int(n)
        self.bends = min(int(bends), self.n - 1)
        self.w = float(w)
        self.delta_max = float(delta_max)
        self.dt = float(dt)
        self.v_clip = float(v_clip)
        self.lam_a = float(lam_a)
        self.attenuation = float(attenuation)
        self.lo, self.hi = float(lo), float(hi)
        self.obs_mask = None if obs_mask is None else np.asarray(obs_mask, dtype=bool)
        self.n_seg = self.bends + 1
        # spine[j] = anchor point of segment j (all coords except axis j fixed)
        spine = np.full((self.n_seg, self.n), 0.5)
        for j in range(self.n_seg):
            spine[j, :j] = self.hi
            spine[j, j : self.n_seg] = self.lo
        self.spine = spine
        self.seg_len = self.hi - self.lo
        self.layout = Layout(
            angular=np.zeros(self.n, dtype=bool),
            lower=np.zeros(self.n),
            upper=np.ones(self.n),
        )

    @property
    def dim(self) -> int:
        return self.n

    @property
    def action_dim(self) -> int:
        return self.n

    def initial_state(self) -> StateVec:
        return StateVec(self.spine[0], self.layout)

    @property
    def metric_weights(self) -> np.ndarray:
        return np.ones(self.n)

    @property
    def sample_bounds(self):
        return np.zeros(self.n), np.ones(self.n)

    # ----- geometry ---------------------------------------------------------
    def _seg_dist2(self, X: np.ndarray) -> np.ndarray:
        """(B, n_seg) squared distances from rows of X to each spine segment."""
        B = X.shape[0]
        d2 = np.empty((B, self.n_seg))
        for j in range(self.n_seg):
            t = np.clip(X[:, j], self.lo, self.hi)
            diff = X - self.spine[j]
            diff = diff.copy()
            diff[:, j] = X[:, j] - t
            d2[:, j] = np.sum(diff * diff, axis=1)
        return d2

    def segment_batch(self, X: np.ndarray) -> np.ndarray:
        """Nearest segment index (ties to the lowest index)."""
        return np.argmin(self._seg_dist2(X), axis=1)

    def tangent_batch(self, X: np.ndarray) -> np.ndarray:
        """Index of the slab whose axis carries full authority.

        Inside the corridor this is the lowest-index slab containing the
        point: in the elbow overlap you keep the old axis until you have
        crept out of the old slab through attenuated motion. Points outside
        every slab fall back to the nearest segment.
        """
        inside = self.in_slab_batch(X)
        first = np.argmax(inside, axis=1)
        near = np.argmin(self._seg_dist2(X), axis=1)
        return np.where(inside.any(axis=1), first, near)

    def in_slab_batch(self, X: np.ndarray) -> np.ndarray:
        """(B, n_seg) membership of each point in each slab."""
        B = X.shape[0]
        ok = np.empty((B, self.n_seg), dtype=bool)
        for j in range(self.n_seg):
            near = np.abs(X - self.spine[j]) <= self.w + 1e-12
            along = (X[:, j] >= self.lo - self.w - 1e-12) & (X[:, j] <= self.hi + self.w + 1e-12)
            near[:, j] = along
            ok[:, j] = near.all(axis=1)
        return ok

    def stable_batch(self, X: np.ndarray) -> np.ndarray:
        return self.in_slab_batch(np.asarray(X, dtype=float)).any(axis=1)

    def stable(self, s: StateVec) -> bool:
        return bool(self.stable_batch(s.values[None, :])[0])

    def progress_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        # arc length credited along the slab being traversed: inside an
        # elbow overlap you are still on the old slab, so creeping toward
        # the next axis earns nothing until the old slab is actually left
        seg = self.tangent_batch(X)
        along = np.clip(X[np.arange(X.shape[0]), seg] - self.lo, 0.0, self.seg_len)
        return seg * self.seg_len + along

    def progress(self, s: StateVec) -> float:
        return float(self.progress_batch(s.values[None, :])[0])

    def step_batch(self, X: np.ndarray, A: np.ndarray):
        X = np.asarray(X, dtype=float)
        A = np.asarray(A, dtype=float)
        if X.shape[-1] != self.n or A.shape[-1] != self.n:
            raise DimensionError("bad state/action width")
        a = np.clip(A, -self.delta_max, self.delta_max)
        seg = self.tangent_batch(X)
        delta = self.attenuation * a
        rows = np.arange(X.shape[0])
        delta[rows, seg] = a[rows, seg]  # full authority along the spine only
        nxt = np.clip(X + delta, 0.0, 1.0)
        return nxt, ~self.stable_batch(nxt)

    # ----- observations / rewards -------------------------------------------
    def obs_dim(self, task: TaskSpec) -> int:
        return self.n + self.n_seg

    def observe_batch(self, X: np.ndarray, setpoints, task: TaskSpec) -> np.ndarray:
        if task.kind != "gait":
            raise ValueError("corridor supports the progress task only")
        seg = self.tangent_batch(X)
        onehot = np.zeros((X.shape[0], self.n_seg))
        onehot[np.arange(X.shape[0]), seg] = 1.0
        out = np.concatenate([X, onehot], axis=1)
        if self.obs_mask is not None:
            if self.obs_mask.shape != (out.shape[1],):
                raise DimensionError("obs_mask length != observation dim")
            out = out * self.obs_mask
        return out

    def observe(self, s: StateVec, setpoints, task: TaskSpec) -> ObservationVec:
        vals = self.observe_batch(s.values[None, :], None, task)[0]
        mask = np.ones(vals.shape[0], dtype=bool) if self.obs_mask is None else self.obs_mask
        return ObservationVec(vals, mask)

    def reward_gait(self, prev: StateVec, nxt: StateVec) -> float:
        dp = self.progress(nxt) - self.progress(prev)
        dx = nxt.values - prev.values
        vel = np.clip(dp / self.dt, -self.v_clip, self.v_clip)
        return float(vel - self.lam_a * np.sum(dx * dx))

    def reward_batch(self, P: np.ndarray, N: np.ndarray, task: TaskSpec, success) -> np.ndarray:
        dp = self.progress_batch(N) - self.progress_batch(P)
        dx = N - P
        return np.clip(dp / self.dt, -self.v_clip, self.v_clip) - self.lam_a * np.sum(dx * dx, axis=1)

    def priv_dim(self, task: TaskSpec) -> int:
        return 2 * self.n + self.n_seg + 2

    def priv_batch(self, X: np.ndarray, Xdot: np.ndarray, task: TaskSpec) -> np.ndarray:
        seg = self.tangent_batch(X)
        onehot = np.zeros((X.shape[0], self.n_seg))
        onehot[np.arange(X.shape[0]), seg] = 1.0
        prog = self.progress_batch(X)[:, None]
        # distance to the nearest slab boundary: a hazard margin the actor never sees
        d2 = self._seg_dist2(X)
        margin = (self.w - np.sqrt(np.min(d2, axis=1)))[:, None]
        return np.concatenate([X, Xdot, onehot, prog, margin], axis=1)

    def with_difficulty(self, d: float) -> "CorridorEnv":
        """d=0 widens the slabs to half-width 0.5 (almost free motion); d=1 is nominal."""
        e = self.clone()
        e.w = 0.5 + float(d) * (self.w - 0.5)
        return e

    def clone(self) -> "CorridorEnv":
        e = object.__new__(CorridorEnv)
        e.__dict__.update(self.__dict__)
        return e


# ---------------------------------------------------------------------------
# Shared scalar wrappers.

def _check_action(env, a: ActionVec):
    if a.dim != env.action_dim:
        raise DimensionError(f"action dim {a.dim} != {env.action_dim}")


def step(env, s: StateVec, a: ActionVec, task: TaskSpec) -> StepResult:
    """One transition. Errors if s is already dropped; success never co-occurs with dropped."""
    if s.layout != env.layout:
        raise DimensionError("state layout does not match the environment")
    _check_action(env, a)
    if task.kind != "gait" and not isinstance(env, PlanarGaitEnv):
        raise ValueError("goal tasks are defined on the gait environment only")
    if not env.stable(s):
        raise DroppedStateError("step on a dropped state; reset the episode")
    N, dropped = env.step_batch(s.values[None, :], a.values[None, :])
    nxt = StateVec(N[0], env.layout)
    dropped = bool(dropped[0])
    sdot = diff_values(nxt.values, s.values, env.layout) / env.dt
    success = False
    if task.kind != "gait" and not dropped:
        success = env.is_success(nxt, sdot, task)
    if task.kind == "gait":
        reward = env.reward_gait(s, nxt)
    else:
        reward = env.reward_goal(s, nxt, task, success)
    if isinstance(env, PlanarGaitEnv):
        dq = np.clip(a.values[: env.m], -env.delta_max, env.delta_max)
        sp = s.values[1 : 1 + env.m] + dq
    else:
        sp = None
    obs = env.observe(nxt, sp, task)
    return StepResult(state=nxt, obs=obs, reward=float(reward), dropped=dropped, success=success)


def is_stable(env, s: StateVec, a_hold: ActionVec, horizon: int) -> bool:
    """True iff s is stable now and holding a_hold for `horizon` steps never drops."""
    _check_action(env, a_hold)
    return bool(
        is_stable_batch(env, s.values[None, :], a_hold.values[None, :], horizon)[0]
    )


def is_stable_batch(env, S: np.ndarray, A_hold: np.ndarray, horizon: int) -> np.ndarray:
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    S = np.asarray(S, dtype=float).copy()
    alive = env.stable_batch(S)
    for _ in range(horizon):
        if not alive.any():
            break
        nxt, dropped = env.step_batch(S[alive], A_hold[alive])
        S[alive] = nxt
        idx = np.flatnonzero(alive)
        alive[idx[dropped]] = False
    return alive


def make_env(name: str, **params):
    if name == "planar_gait":
        return PlanarGaitEnv(**params)
    if name == "corridor":
        return CorridorEnv(**params)
    raise ValueError(f"unknown env {name!r}")


# ---------------------------------------------------------------------------
# Scripted finger gait: a deterministic controller that sustains rotation
# forever. Used as a behavior oracle in tests and to synthesize reference
# reset states.

@dataclass
class GaitScript:
    """Rotate while 3 fingers hold; near the arc limit, lift the most advanced
    finger whose removal keeps a stable pair, swing it back, re-attach."""

    env: PlanarGaitEnv
    direction: float = 1.0
    lift_frac: float = 0.55

    def action(self, s: StateVec) -> ActionVec:
        env = self.env
        m = env.m
        th, q, r, _ = env.split(s.values)
        con = r <= env.r_contact
        a = np.zeros(env.action_dim)
        q_hi = self.lift_frac * env.q_lim
        if con.sum() >= 3 or (con.sum() == 2 and not (~con).any()):
            adv = np.where(con, self.direction * q, -np.inf)
            if adv.max() >= q_hi - 1e-9:
                i = self._liftable(q, con)
                if i is not None:
                    a[m + i] = env.r_step_max  # lift
                    return ActionVec(a)
            a[:m] = np.where(con, self.direction * env.delta_max, 0.0)  # rotate
            return ActionVec(a)
        free = np.flatnonzero(~con)
        i = free[0]
        if self.direction * q[i] > -q_hi + 1e-9:
            a[i] = -self.direction * env.delta_max  # swing back
        else:
            a[m + i] = -0.8 * env.touch_max  # descend gently enough to attach
        return ActionVec(a)

    def _liftable(self, q, con):
        env = self.env
        pos = env.base + q
        order = np.argsort(-self.direction * q)
        for i in order:
            if not con[i]:
                continue
            rest = [j for j in np.flatnonzero(con) if j != i]
            ok = any(
                abs(wrap_angle(pos[a_] - pos[b_])) >= env.spread_min + 1e-9
                for k, a_ in enumerate(rest)
                for b_ in rest[k + 1 :]
            )
            if ok and len(rest) >= 2:
                return int(i)
        return None

    def rollout(self, steps: int, task: TaskSpec | None = None):
        """Run the script from the initial state; returns the visited states."""
        env = self.env
        task = task or TaskSpec()
        s = env.initial_state()
        out = [s]
        for _ in range(steps):
            res = step(env, s, self.action(s), task)
            if res.dropped:
                break
            s = res.state
            out.append(s)
        return out
