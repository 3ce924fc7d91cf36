"""Exception hierarchy.

The CLI maps these onto exit codes: ConfigError -> 2, NumericalError -> 3,
StaleManifestError -> 4.
"""


class TailILCError(Exception):
    """Base class for all package errors."""


class ConfigError(TailILCError, ValueError):
    """Invalid configuration or parameter combination."""


class DimensionError(TailILCError, ValueError):
    """Array shapes do not conform."""


class NumericalError(TailILCError, ArithmeticError):
    """A numerical procedure failed (singularity, divergence, rank loss)."""


class SingularFrequencyError(NumericalError):
    def __init__(self, omega, message=None):
        self.omega = float(omega)
        super().__init__(message or f"(zI - A) is singular at omega={self.omega:.6g} rad/sample")


class AlgebraicLoopError(NumericalError):
    """Feedback interconnection is ill-posed (I + D_P D_K singular)."""


class ParameterError(ConfigError):
    """Motion-profile or plant parameters are infeasible."""


class RankError(NumericalError):
    def __init__(self, message, spectrum=None):
        self.spectrum = spectrum
        super().__init__(message)


class DivergenceError(NumericalError):
    def __init__(self, message, trial=None, curve=None):
        self.trial = trial
        self.curve = curve
        super().__init__(message)


class NonConvergentError(NumericalError):
    """ILC resolvent I - Q(I - LJ) is singular."""


class TrainingError(DivergenceError):
    """Neural network training produced non-finite or exploding loss."""


class StaleManifestError(TailILCError):
    """Pipeline outputs are missing, corrupted, or were produced by another config."""
