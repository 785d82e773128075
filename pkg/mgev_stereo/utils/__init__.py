"""Utility functions."""

from .padding import InputPadder
from .workers import prefetch, worker_count

__all__ = ["InputPadder", "prefetch", "worker_count"]
