"""Sentence-granular dense retrieval with noisy-OR passage ranking."""

__version__ = "0.1.0"
