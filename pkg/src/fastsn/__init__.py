"""Spectral-norm estimators, rank-1 kernel separation and a small regularized CNN."""
from .errors import (ConvergenceNotReached, DegenerateWitness, FastSNError, FormatError,
                     KernelTooLarge, MaxItersReached, NumericalFailure, ShapeMismatch,
                     VersionMismatch, ZeroPerturbation)
from .numeric import fft2, ifft2, power_iteration, svd
from .spectral import (Method, SpectralEstimate, layer_penalty, penalty_gradient,
                       spectral_norm_exact, spectral_norm_fft, spectral_norm_power)
from .separation import SeparatedKernel, is_separable, separate_kernel, separated_penalty

__version__ = "0.1.0"
