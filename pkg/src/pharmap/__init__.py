"""Numerics for p-harmonic maps into rotationally symmetric nonpositively
curved targets: warped-product geometry, convex gluing and blending of
metrics, a finite-element p-energy minimizer, and verification utilities.
"""

from .errors import (
    ConstructionError,
    DivergenceError,
    DomainError,
    InfeasibleError,
    SearchExhaustedError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "UsageError",
    "DomainError",
    "SearchExhaustedError",
    "InfeasibleError",
    "ConstructionError",
    "DivergenceError",
]
