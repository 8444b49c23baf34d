"""Reset strategies the trainer is compared against.

Each sampler exposes .sample(rng) -> StateVec plus a .kind tag; the ER
variant also receives visited states through the trainer's insert hook.
The gravity-curriculum analogue anneals the env difficulty scalar and,
for the go-to-root task, restarts from a small set of scripted grasps
spread around the circle.
"""

from __future__ import annotations

import numpy as np

from .core import RngHandle, StateVec, wrap_angle
from .envs import GaitScript, TaskSpec, is_stable_batch
from .extract import ResetBuffer, sample_reset
from .grrt import sample_target


class FiSampler:
    """Always the same fixed start state."""

    kind = "FI"

    def __init__(self, env, state: StateVec | None = None):
        state = state if state is not None else env.initial_state()
        if not env.stable(state):
            raise ValueError("fixed reset state is unstable")
        self.state = state

    def sample(self, rng: RngHandle) -> StateVec:
        return self.state


class RxrSampler:
    """Uniform over a tree-harvested reset buffer."""

    kind = "RXR"

    def __init__(self, buffer: ResetBuffer, env=None):
        if len(buffer) == 0:
            raise ValueError("empty reset buffer")
        self.buffer = buffer

    def sample(self, rng: RngHandle) -> StateVec:
        return sample_reset(self.buffer, rng)


class StateListSampler:
    """Uniform over an explicit state list (used by the go-to-root curriculum)."""

    def __init__(self, states: list[StateVec], kind: str = "LIST"):
        if not states:
            raise ValueError("empty state list")
        self.states = states
        self.kind = kind

    def sample(self, rng: RngHandle) -> StateVec:
        return self.states[int(rng.integers(0, len(self.states)))]


class CycleSampler:
    """Walk a fixed state list in order, wrapping around.

    Evaluation wants every policy scored from the same starts in the
    same order, so draws here ignore the rng entirely.
    """

    kind = "CYCLE"

    def __init__(self, states: list[StateVec]):
        if not states:
            raise ValueError("empty state list")
        self.states = states
        self._next = 0

    def sample(self, rng: RngHandle) -> StateVec:
        s = self.states[self._next % len(self.states)]
        self._next += 1
        return s


def uniform_stable_states(env, k: int, rng: RngHandle,
                          batch: int = 8192, max_batches: int = 4096) -> list[StateVec]:
    """k states drawn uniformly from the env's stable set by batched rejection.

    Used to build method-blind evaluation starts. Unlike the grasp
    sampler this checks bare stability (no settling hold), so it also
    terminates on envs where held-action acceptance is astronomically
    rare. Raises RuntimeError if the stable set is too thin to hit k
    accepts within max_batches batches.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    lower, upper = env.sample_bounds
    out: list[StateVec] = []
    for _ in range(max_batches):
        X = rng.uniform(size=(batch, env.dim)) * (upper - lower) + lower
        good = X[env.stable_batch(X)]
        for row in good:
            out.append(StateVec(row.copy(), env.layout))
            if len(out) == k:
                return out
    raise RuntimeError(
        f"found only {len(out)} of {k} stable states in {max_batches} batches")


class ErSampler:
    """Ring buffer of states the policy itself visited.

    The trainer feeds every live step through insert_states; a 1%
    subsample bounds memory. Draws are uniform over the ring, skipping
    entries that no longer pass the stability check (mid-episode states
    can sour when the grasp later degrades).
    """

    kind = "ER"

    def __init__(self, env, capacity: int = 4096, rate: float = 0.01, state: StateVec | None = None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        seed = state if state is not None else env.initial_state()
        if not env.stable(seed):
            raise ValueError("seed reset state is unstable")
        self.env = env
        self.capacity = capacity
        self.rate = rate
        self.seed_state = seed
        self.ring: list[np.ndarray] = [seed.values.copy()]

    def insert_states(self, values: np.ndarray, rng: RngHandle):
        values = np.atleast_2d(values)
        keep = rng.uniform(size=values.shape[0]) < self.rate
        for row in values[keep]:
            self.ring.append(row.copy())
            if len(self.ring) > self.capacity:
                self.ring.pop(0)

    def sample(self, rng: RngHandle) -> StateVec:
        for _ in range(100):
            vals = self.ring[int(rng.integers(0, len(self.ring)))]
            if self.env.stable_batch(vals[None, :])[0]:
                return StateVec(vals.copy(), self.env.layout)
        return self.seed_state


class SgsSampler:
    """Rejection-sample uniform states, keep those that hold stably."""

    kind = "SGS"

    def __init__(self, env, max_tries: int = 1000, horizon: int = 50):
        if max_tries < 1:
            raise ValueError("max_tries must be >= 1")
        self.env = env
        self.max_tries = max_tries
        self.horizon = horizon
        self.tries = 0
        self.accepts = 0

    def sample(self, rng: RngHandle) -> StateVec:
        bounds = self.env.sample_bounds
        zero = np.zeros((1, self.env.action_dim))
        for _ in range(self.max_tries):
            self.tries += 1
            x = sample_target(bounds, rng, self.env.layout)
            if is_stable_batch(self.env, x.values[None, :], zero, self.horizon)[0]:
                self.accepts += 1
                return x
        raise RuntimeError(f"no stable grasp found in {self.max_tries} tries")


def sgs_acceptance_rate(env, n: int, rng: RngHandle, horizon: int = 50) -> float:
    """Fraction of n uniform samples that pass the stability hold."""
    lo, hi = env.sample_bounds
    X = rng.uniform(lo, hi, size=(n, env.dim))
    ok = is_stable_batch(env, X, np.zeros((n, env.action_dim)), horizon)
    return float(ok.mean())


def gc_schedule(total_steps: int):
    """Linear difficulty ramp: 0 at step 0, 1 from total_steps onward."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")

    def difficulty(t: int) -> float:
        return min(t / total_steps, 1.0)

    return difficulty


def gc_goto_resets(env, n: int = 20, max_steps: int = 2000, tol: float = 0.2) -> list[StateVec]:
    """n stable grasps roughly evenly spaced in object angle.

    Generated by running the scripted gait from the root until a full
    revolution, then picking the visited state nearest each target angle.
    """
    states = GaitScript(env).rollout(max_steps)
    acc = np.array([s.values[-1] for s in states])
    if acc[-1] < 2.0 * np.pi:
        raise RuntimeError("scripted gait did not complete a revolution")
    thetas = np.array([s.values[0] for s in states])
    out = []
    for k in range(n):
        target = wrap_angle(2.0 * np.pi * k / n)
        d = np.abs(wrap_angle(thetas - target))
        i = int(np.argmin(d))
        if d[i] > tol:
            raise RuntimeError(f"no visited state within {tol} rad of angle {target:.3f}")
        out.append(states[i])
    assert all(env.stable(s) for s in out)
    return out
