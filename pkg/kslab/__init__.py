"""KS particle laboratory: Keller-Segel N-particle simulation and diagnostics."""

__version__ = "1.0.0"
