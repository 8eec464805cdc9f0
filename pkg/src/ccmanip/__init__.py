"""Adaptive control for changing-contact manipulation with a point-effector simulator."""

__version__ = "0.1.0"
