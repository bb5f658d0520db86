"""Rigidity-constrained multi-agent path planning on graphs."""
__version__ = "0.1.0"
