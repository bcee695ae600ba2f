"""Trajectory planning for aerial target tracking with guaranteed corridor
safety and target visibility."""

__version__ = "0.1.0"
