"""Exception hierarchy shared by all modules."""


class PDDistIAGError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(PDDistIAGError, ValueError):
    """An argument is outside its admissible range."""


class RankDeficiencyError(PDDistIAGError, ArithmeticError):
    """The sampled moment matrices violate the full-rank assumption (A2)."""


class NumericalError(PDDistIAGError, ArithmeticError):
    """An iterative numerical routine failed to converge."""


class TopologyError(PDDistIAGError):
    """A communication graph could not be built or is not connected."""


class DivergenceError(PDDistIAGError, FloatingPointError):
    """An iterative solver produced non-finite values."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class CertificateError(PDDistIAGError):
    """The step-size certificate cannot be evaluated at the requested step."""
