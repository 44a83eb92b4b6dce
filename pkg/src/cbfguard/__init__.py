"""Barrier-function runtime guard: attack detection and QP-based recovery."""

__version__ = "0.1.0"
