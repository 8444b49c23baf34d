"""Shared vector types, wrapped-angle state metric, seeded RNG streams, binary I/O.

Every other module builds on the types here. States are flat float64
vectors with a per-dimension layout that says which dims are angles
(stored wrapped to [-pi, pi)) and which are bounded linear coordinates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

MASK64 = (1 << 64) - 1


class DimensionError(ValueError):
    """Vector lengths or layouts do not agree."""


class FormatError(ValueError):
    """A binary container has a bad magic string or malformed record."""


class VersionError(FormatError):
    """A binary container was written by an incompatible format version."""


class TruncatedError(FormatError):
    """A binary container ends before its declared payload."""


def wrap_angle(x):
    """Wrap angles (scalar or array) to [-pi, pi)."""
    return np.mod(np.asarray(x, dtype=float) + np.pi, TWO_PI) - np.pi


@dataclass(frozen=True)
class Layout:
    """Per-dimension descriptors: angular mask plus linear bounds.

    Angular dims ignore lower/upper (wrapped instead of clamped).
    """

    angular: np.ndarray  # bool, shape (dim,)
    lower: np.ndarray  # float64, shape (dim,)
    upper: np.ndarray  # float64, shape (dim,)

    def __post_init__(self):
        ang = np.asarray(self.angular, dtype=bool)
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if not (ang.shape == lo.shape == hi.shape) or ang.ndim != 1:
            raise DimensionError("layout arrays must be 1-D and equal length")
        if np.any(lo[~ang] > hi[~ang]):
            raise ValueError("linear bounds must satisfy lower <= upper")
        for arr in (ang, lo, hi):
            arr.flags.writeable = False
        object.__setattr__(self, "angular", ang)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.angular.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Layout):
            return NotImplemented
        return (
            np.array_equal(self.angular, other.angular)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self):
        return hash((self.angular.tobytes(), self.lower.tobytes(), self.upper.tobytes()))

    @staticmethod
    def of(dims) -> "Layout":
        """Build from a sequence of (kind, lower, upper) with kind 'angular'|'linear'."""
        kinds = [d[0] for d in dims]
        bad = [k for k in kinds if k not in ("angular", "linear")]
        if bad:
            raise ValueError(f"unknown dim kind {bad[0]!r}")
        return Layout(
            angular=np.array([k == "angular" for k in kinds]),
            lower=np.array([float(d[1]) for d in dims]),
            upper=np.array([float(d[2]) for d in dims]),
        )


def wrap_values(values: np.ndarray, layout: Layout) -> np.ndarray:
    """Wrap angular dims to [-pi, pi), clamp linear dims to bounds. Works on (dim,) or (B, dim)."""
    values = np.asarray(values, dtype=float)
    out = np.clip(values, layout.lower, layout.upper)
    ang = layout.angular
    if ang.any():
        out[..., ang] = wrap_angle(values[..., ang])
    return out


def diff_values(a: np.ndarray, b: np.ndarray, layout: Layout) -> np.ndarray:
    """Per-dim difference a - b, taking the shortest arc on angular dims."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    ang = layout.angular
    if ang.any():
        d[..., ang] = wrap_angle(d[..., ang])
    return d


@dataclass(frozen=True)
class StateVec:
    """Immutable state vector with layout. Angular dims are kept wrapped."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.shape[0] != self.layout.dim:
            raise DimensionError(
                f"state has {v.shape} values for layout dim {self.layout.dim}"
            )
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateVec):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.values.tobytes(), self.layout))


def wrap_state(s: StateVec) -> StateVec:
    """Return s with angular dims wrapped and linear dims clamped. Idempotent."""
    return StateVec(wrap_values(s.values, s.layout), s.layout)


def state_distance(a: StateVec, b: StateVec, weights) -> float:
    """Weighted Euclidean distance with shortest-arc differences on angular dims."""
    if a.layout != b.layout:
        raise DimensionError("states have different layouts")
    w = np.asarray(weights, dtype=float)
    if w.shape != (a.layout.dim,):
        raise DimensionError("weights length must match state dim")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    d = diff_values(a.values, b.values, a.layout)
    return float(np.sqrt(np.sum(w * d * d)))


def distance_to_many(x: np.ndarray, pts: np.ndarray, layout: Layout, weights: np.ndarray) -> np.ndarray:
    """Vectorized state_distance from one point x (dim,) to rows of pts (N, dim)."""
    d = diff_values(pts, x[None, :], layout)
    return np.sqrt(np.sum(weights[None, :] * d * d, axis=1))


@dataclass(frozen=True)
class ActionVec:
    """Flat action vector: per-joint setpoint deltas."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise DimensionError("action must be 1-D")
        if not np.all(np.isfinite(v)):
            raise ValueError("action components must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActionVec):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


@dataclass(frozen=True)
class ObservationVec:
    """Observation vector plus a feedback-ablation mask; masked entries are zeroed."""

    values: np.ndarray
    mask: np.ndarray  # bool; True = component visible

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        m = np.asarray(self.mask, dtype=bool).copy()
        if v.shape != m.shape or v.ndim != 1:
            raise DimensionError("observation values and mask must be equal-length 1-D")
        v[~m] = 0.0
        v.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)


class RngHandle:
    """Deterministic random stream keyed by (seed, stream id).

    Identical (seed, stream) pairs replay identical sequences; distinct
    stream ids on the same seed are statistically independent. Built on
    PCG64 with a SeedSequence spawn key, which is stable across platforms.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & MASK64
        self.stream = int(stream) & MASK64
        self.gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,)))
        )

    def split(self, stream: int) -> "RngHandle":
        """Fresh independent handle on the same seed with a different stream id."""
        return RngHandle(self.seed, stream)

    def normal(self, scale=1.0, size=None):
        return self.gen.normal(0.0, scale, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size=size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)

    def permutation(self, n: int):
        return self.gen.permutation(n)


# ---------------------------------------------------------------------------
# Binary container helpers (little-endian, explicit header).

def read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedError(f"expected {n} bytes, got {len(buf)}")
    return buf


def write_layout(f, layout: Layout):
    f.write(struct.pack("<I", layout.dim))
    for i in range(layout.dim):
        f.write(
            struct.pack(
                "<Bdd",
                1 if layout.angular[i] else 0,
                float(layout.lower[i]),
                float(layout.upper[i]),
            )
        )


def read_layout(f) -> Layout:
    (dim,) = struct.unpack("<I", read_exact(f, 4))
    kinds, lo, hi = [], [], []
    for _ in range(dim):
        k, a, b = struct.unpack("<Bdd", read_exact(f, 17))
        kinds.append(bool(k))
        lo.append(a)
        hi.append(b)
    return Layout(angular=np.array(kinds, dtype=bool), lower=np.array(lo), upper=np.array(hi))


def write_f64_array(f, arr: np.ndarray):
    a = np.ascontiguousarray(arr, dtype="<f8")
    f.write(a.tobytes())


def read_f64_array(f, n: int) -> np.ndarray:
    return np.frombuffer(read_exact(f, 8 * n), dtype="<f8").astype(float)
