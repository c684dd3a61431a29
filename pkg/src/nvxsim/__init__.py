"""Simulated cross-ISA N-variant execution with distributed monitors."""

__version__ = "0.1.0"
