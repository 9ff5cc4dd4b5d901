"""Weak-to-strong generalization lab for random feature models."""

__version__ = "0.1.0"
