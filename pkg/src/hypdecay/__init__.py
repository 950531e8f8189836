"""Large-time decay exponents of strictly hyperbolic systems with time-dependent coefficients."""

__version__ = "0.1.0"
