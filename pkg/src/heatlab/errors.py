"""Exception hierarchy shared by every heatlab module."""


class HeatlabError(Exception):
    """Base class for all library errors."""


class ConfigurationError(HeatlabError, ValueError):
    """Invalid geometry, grid or experiment parameters."""


class ShapeError(HeatlabError, ValueError):
    """Array shape does not match the grid it is used with."""


class DomainError(HeatlabError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class StabilityError(HeatlabError):
    """Time step incompatible with the requested scheme guarantees."""


class StepFailureError(HeatlabError):
    """The inner fixed-point loop of a semilinear step did not converge."""

    def __init__(self, message, *, step=None, time=None, increment=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.increment = increment


class EstimationError(HeatlabError):
    """An estimator could not produce any admissible value."""


class PicardDivergenceError(HeatlabError):
    """Picard linearization failed to converge."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class CertificateError(HeatlabError):
    """A numerical certificate (envelope, sign, bound) was violated."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst
