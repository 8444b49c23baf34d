"""Tree-guided exploration lab: non-holonomic tree planning, tree-derived
reset distributions, imitation pre-training, and PPO on desk-scale tasks."""

__version__ = "0.1.0"
