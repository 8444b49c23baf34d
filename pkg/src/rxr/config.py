"""Flat key=value run configuration: parsing, echo, and hashing.

One experiment = one config. The format is a plain text file of
``key = value`` lines; ``#`` starts a comment, blank lines are skipped.
Every key has a typed default below, unknown or repeated keys are
rejected, and ``dump_config`` emits a canonical echo whose reparse is
the identity. The echo's SHA-256 doubles as the run fingerprint.
"""

from __future__ import annotations

import hashlib


class ConfigError(ValueError):
    """Bad key, bad value, or malformed line in a run config."""


# Typed defaults, in canonical emit order. The type of each default is
# the type of the key (int keys reject "1.5", float keys accept "2" as 2.0).
DEFAULTS: dict[str, int | float | str] = {
    "env": "gait",                # gait | corridor
    "env.m": 3,                   # fingers (gait env)
    "env.n": 6,                   # dims (corridor env)
    "env.mask": "none",           # none | contacts | angle
    "task": "gait",               # gait | goto_root | arbitrary
    "task.goal": 0.0,             # goal angle, read only for task = arbitrary
    "seed": 0,
    "plan.n_max": 10_000,
    "plan.k_max": 64,
    "plan.alpha": 0.15,
    "plan.horizon": 50,
    "plan.max_attempts": 0,       # 0 = grow until n_max nodes
    "plan.hold": "auto",          # auto | sampled | zero
    "extract.budget": 512,
    "reset.kind": "RXR",          # RXR | RXR_IPT | FI | FI_IPT | ER | SGS | GC
    "reset.er_capacity": 4096,
    "reset.er_rate": 0.01,
    "reset.sgs_max_tries": 1000,
    "reset.gc_total_steps": 0,    # 0 = train.max_env_steps
    "ipt.beta": 2.0,
    "ipt.bc_epochs": 100,
    "ipt.bc_batch": 64,
    "ipt.value_steps": 200_000,
    "train.iters": 1_000_000,     # cap; max_env_steps is the usual stop
    "train.episodes": 32,
    "train.max_steps": 200,
    "train.max_env_steps": 500_000,
    "train.gamma": 0.99,
    "train.lam": 0.95,
    "train.clip": 0.2,
    "train.epochs": 4,
    "train.minibatch": 256,
    "train.entropy_coef": 0.003,
    "train.lr_pi": 3e-4,
    "train.lr_v": 1e-3,
    "eval.episodes": 10,
    "eval.max_steps": 200,
}

CHOICES: dict[str, tuple[str, ...]] = {
    "env": ("gait", "corridor"),
    "env.mask": ("none", "contacts", "angle"),
    "task": ("gait", "goto_root", "arbitrary"),
    "plan.hold": ("auto", "sampled", "zero"),
    "reset.kind": ("RXR", "RXR_IPT", "FI", "FI_IPT", "ER", "SGS", "GC"),
}


def _coerce(key: str, token: str):
    want = type(DEFAULTS[key])
    if want is str:
        if token not in CHOICES[key]:
            raise ConfigError(
                f"{key}: {token!r} is not one of {', '.join(CHOICES[key])}"
            )
        return token
    try:
        if want is int:
            return int(token)
        return float(token)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {token!r} as {want.__name__}") from None


def parse_config(text: str) -> dict:
    """Parse config text into a full dict (defaults filled in)."""
    cfg = dict(DEFAULTS)
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        seen.add(key)
        cfg[key] = _coerce(key, value)
    return cfg


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def dump_config(cfg: dict) -> str:
    """Canonical echo: every key once, in DEFAULTS order. Reparsing the
    echo reproduces `cfg` exactly."""
    extra = set(cfg) - set(DEFAULTS)
    if extra:
        raise ConfigError(f"unknown keys: {sorted(extra)}")
    lines = []
    for key, default in DEFAULTS.items():
        v = cfg.get(key, default)
        if type(v) is not type(default):
            raise ConfigError(
                f"{key}: expected {type(default).__name__}, got {type(v).__name__}"
            )
        if isinstance(v, str) and v not in CHOICES[key]:
            raise ConfigError(f"{key}: {v!r} is not one of {', '.join(CHOICES[key])}")
        lines.append(f"{key} = {v!r}" if isinstance(v, float) else f"{key} = {v}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical echo; stable run fingerprint."""
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()
