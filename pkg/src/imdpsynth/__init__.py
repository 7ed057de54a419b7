"""Data-driven strategy synthesis for partially-known switched stochastic systems."""

__version__ = "0.1.0"
