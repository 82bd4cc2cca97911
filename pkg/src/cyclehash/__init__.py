"""Coupled-cycle adversarial hashing for cross-modal retrieval."""

__version__ = "0.1.0"
