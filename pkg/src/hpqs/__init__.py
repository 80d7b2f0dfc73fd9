"""Hybrid parameterized quantum state (HPQS) toolkit: a PQC and a neural estimator blended by a fixed lambda."""

__version__ = "0.1.0"
