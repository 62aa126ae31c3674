"""Exception hierarchy shared by every module."""


class FastSNError(Exception):
    """Base class for all errors raised by this package."""


class NumericalFailure(FastSNError):
    """An iterative decomposition failed to converge within its sweep cap."""


class ConvergenceNotReached(FastSNError):
    """Power iteration hit its iteration cap before the estimate settled.

    The last estimate is kept on the exception so callers that prefer a
    warning over a crash (the training loop) can still use it.
    """

    def __init__(self, message, sigma=None, u=None, v=None, iterations=0):
        super().__init__(message)
        self.sigma = sigma
        self.u = u
        self.v = v
        self.iterations = iterations


class KernelTooLarge(FastSNError):
    """Kernel extent exceeds the input (or padding) size."""


class DegenerateWitness(FastSNError):
    """A spectral estimate carries no singular pair or frequency."""


class ShapeMismatch(FastSNError):
    """Input shape is incompatible with the network layer."""


class ZeroPerturbation(FastSNError):
    """A sensitivity ratio was requested for the zero vector."""


class MaxItersReached(FastSNError):
    """DeepFool did not flip the label within its iteration budget."""

    def __init__(self, message, x_adv=None, norm=0.0, iterations=0):
        super().__init__(message)
        self.x_adv = x_adv
        self.norm = norm
        self.iterations = iterations


class FormatError(FastSNError):
    """A dataset, checkpoint or kernel file could not be parsed."""


class VersionMismatch(FormatError):
    """A checkpoint was written by an incompatible format version."""
