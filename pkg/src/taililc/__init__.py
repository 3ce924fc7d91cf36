"""Imitation-learned feedforward for precision motion stages.

Expert policy: lifted iterative learning control on a surrogate plant.
Student policies: a DPCA encoder / MLP / DPCA decoder cascade (TAIL) and a
samplewise MLP baseline (NN-ILC).
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DimensionError,
    DivergenceError,
    NumericalError,
    RankError,
    StaleManifestError,
    TailILCError,
)

__all__ = [
    "__version__",
    "ConfigError",
    "DimensionError",
    "DivergenceError",
    "NumericalError",
    "RankError",
    "StaleManifestError",
    "TailILCError",
]
