"""Frequency-resolved Hong-Ou-Mandel delay estimation toolkit."""

__version__ = "0.1.0"
