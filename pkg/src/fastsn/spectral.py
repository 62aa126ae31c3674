"""Spectral norm estimators for linear and convolution layers.

Three routes are provided and cross-checked in the test suite:

* ``spectral_norm_exact``  -- largest singular value from a full SVD;
* ``spectral_norm_power``  -- power iteration on an explicit matrix;
* ``spectral_norm_fft``    -- max magnitude of the 2D DFT of the zero-padded
  kernel, which equals the norm of the circular convolution operator.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .conv import ConvMatrixKind, as_kernel, circulant_conv_matrix, valid_conv_matrix
from .errors import DegenerateWitness, KernelTooLarge
from .numeric import fft2, ifft2, power_iteration, svd

# Relative slack when deciding that two DFT magnitudes tie.
TIE_RTOL = 1e-12


class Method(enum.Enum):
    EXACT_SVD = "exact"
    POWER_ITERATION = "power"
    FOURIER_TRANSFORM = "fft"


@dataclass(frozen=True)
class SpectralEstimate:
    """A spectral norm value plus what is needed to differentiate it.

    Matrix methods carry the singular pair ``(u, v)``; the Fourier method
    carries the dominant frequency and its complex amplitude. ``operator``
    records which matrix ``u``/``v`` live in, e.g. ``("valid", 16, 16)``.
    """

    sigma: float
    method: Method
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    frequency: tuple[int, int] | None = None
    amplitude: complex | None = None
    grid: tuple[int, int] | None = None
    operator: tuple[str, int, int] | None = None
    converged: bool = True
    iterations: int = field(default=0, compare=False)

    @property
    def has_witness(self) -> bool:
        if self.method is Method.FOURIER_TRANSFORM:
            return self.frequency is not None and self.amplitude is not None
        return self.u is not None and self.v is not None


@dataclass(frozen=True)
class CirculantEigendecomposition:
    q: np.ndarray
    eigenvalues: np.ndarray


def _grid(n) -> tuple[int, int]:
    if isinstance(n, (tuple, list)):
        rows, cols = (int(n[0]), int(n[1]))
    else:
        rows = cols = int(n)
    if rows < 1 or cols < 1:
        raise ValueError(f"padding size must be >= 1, got {n}")
    return rows, cols


def pad_kernel(k, n) -> np.ndarray:
    """Zero-pad the trailing two axes of ``k`` to the ``n`` grid."""
    k = np.asarray(k, dtype=float)
    rows, cols = _grid(n)
    w, h = k.shape[-2:]
    if w > rows or h > cols:
        raise KernelTooLarge(f"kernel {w}x{h} does not fit a {rows}x{cols} grid")
    padded = np.zeros(k.shape[:-2] + (rows, cols))
    padded[..., :w, :h] = k
    return padded


def _dominant(spectrum: np.ndarray):
    """Index of the max-magnitude entry; ties go to the smallest row-major index.

    Works on stacks: returns flat indices over the last two axes.
    """
    mags = np.abs(spectrum)
    flat = mags.reshape(mags.shape[:-2] + (-1,))
    top = flat.max(axis=-1, keepdims=True)
    near = flat >= top * (1.0 - TIE_RTOL)
    return np.argmax(near, axis=-1)


def spectral_norm_fft(k, n) -> SpectralEstimate:
    """Norm of circular convolution by ``k`` on an ``n x n`` grid via the DFT."""
    k = as_kernel(k, single_channel=True)
    spectrum = fft2(pad_kernel(k, n))
    idx = int(_dominant(spectrum))
    u, v = divmod(idx, spectrum.shape[1])
    z = complex(spectrum[u, v])
    return SpectralEstimate(sigma=abs(z), method=Method.FOURIER_TRANSFORM,
                            frequency=(u, v), amplitude=z, grid=spectrum.shape)


def spectral_norm_fft_literal(k, n) -> SpectralEstimate:
    """Four-step variant: transform, keep the dominant entry, invert, read off.

    The surviving single-frequency image has constant magnitude ``|z| / N``
    where ``N`` is the grid size; undoing the ``1/N`` of the inverse
    transform gives ``|z|`` back as the largest-magnitude entry.
    """
    k = as_kernel(k, single_channel=True)
    spectrum = fft2(pad_kernel(k, n))
    idx = int(_dominant(spectrum))
    kept = np.zeros_like(spectrum)
    kept.flat[idx] = spectrum.flat[idx]
    image = ifft2(kept) * kept.size
    sigma = float(np.abs(image).max())
    u, v = divmod(idx, spectrum.shape[1])
    return SpectralEstimate(sigma=sigma, method=Method.FOURIER_TRANSFORM,
                            frequency=(u, v), amplitude=complex(spectrum[u, v]),
                            grid=spectrum.shape)


def spectral_norm_power(w, max_iters: int = 500, tol: float = 1e-10, seed: int = 0,
                        operator: tuple[str, int, int] | None = None) -> SpectralEstimate:
    sigma, u, v = power_iteration(w, max_iters=max_iters, tol=tol, seed=seed)
    return SpectralEstimate(sigma=sigma, method=Method.POWER_ITERATION, u=u, v=v,
                            operator=operator)


def spectral_norm_exact(w, operator: tuple[str, int, int] | None = None) -> SpectralEstimate:
    res = svd(w)
    return SpectralEstimate(sigma=float(res.singular_values[0]), method=Method.EXACT_SVD,
                            u=res.left_vectors[:, 0], v=res.right_vectors[:, 0],
                            operator=operator)


def fourier_diagonalizer(n: int) -> np.ndarray:
    """``Q = (1/n) (F kron F)`` with ``F`` the unnormalized n-point DFT matrix."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(n)
    f = np.exp(-2j * np.pi * (np.outer(k, k) % n) / n)
    return np.kron(f, f) / n


def circulant_eigendecomposition(k, n: int) -> CirculantEigendecomposition:
    """Eigenvalues of the circulant operator of ``k`` in the order of ``Q``'s rows.

    With ``A`` the circulant matrix, ``Q A Q^*`` is diagonal and entry
    ``(u, v)`` is the DFT of the padded kernel at ``(-u, -v)``.
    """
    spectrum = fft2(pad_kernel(as_kernel(k, single_channel=True), n))
    idx = (-np.arange(n)) % n
    eig = spectrum[idx[:, None], idx[None, :]].ravel()
    return CirculantEigendecomposition(q=fourier_diagonalizer(n), eigenvalues=eig)


def _conv_operator(kind: ConvMatrixKind, k: np.ndarray, n) -> tuple[np.ndarray, tuple]:
    rows, cols = _grid(n)
    if kind is ConvMatrixKind.VALID:
        return valid_conv_matrix(k, rows, cols), ("valid", rows, cols)
    if rows != cols:
        raise ValueError("circular operators need a square grid")
    return circulant_conv_matrix(k, rows), ("circular", rows, cols)


def estimate(param, method: Method, n=None, kind: ConvMatrixKind | None = None,
             max_iters: int = 500, tol: float = 1e-10, seed: int = 0) -> SpectralEstimate:
    """Spectral norm of a linear matrix (``n is None``) or one 2D conv kernel."""
    a = np.asarray(param, dtype=float)
    if n is None:
        if method is Method.FOURIER_TRANSFORM:
            raise ValueError("the Fourier method applies to convolution kernels only")
        if method is Method.POWER_ITERATION:
            return spectral_norm_power(a, max_iters, tol, seed)
        return spectral_norm_exact(a)
    if method is Method.FOURIER_TRANSFORM:
        return spectral_norm_fft(a, n)
    if kind is None:
        kind = ConvMatrixKind.VALID if method is Method.POWER_ITERATION else ConvMatrixKind.CIRCULAR
    m, op = _conv_operator(kind, a, n)
    if method is Method.POWER_ITERATION:
        return spectral_norm_power(m, max_iters, tol, seed, operator=op)
    return spectral_norm_exact(m, operator=op)


def layer_penalty(param, method: Method, n=None, kind: ConvMatrixKind | None = None,
                  max_iters: int = 500, tol: float = 1e-10, seed: int = 0):
    """Squared spectral norm penalty of one layer.

    Linear layers (``n is None``) contribute ``sigma(W)^2``. Conv layers
    with a 4D ``(out, in, w, h)`` kernel contribute the sum of squared norms
    of the per-channel-pair 2D slices, which upper-bounds the squared norm
    of the whole multi-channel operator.

    Returns ``(penalty, per_pair)``; ``per_pair`` is a flat list in
    ``(out, in)`` row-major order.
    """
    a = np.asarray(param, dtype=float)
    if n is None or a.ndim == 2:
        est = estimate(a, method, n, kind, max_iters, tol, seed)
        return est.sigma ** 2, [est]
    if a.ndim != 4:
        raise ValueError(f"conv kernels must be 2D or 4D, got shape {a.shape}")
    per_pair = [estimate(a[o, i], method, n, kind, max_iters, tol, seed)
                for o in range(a.shape[0]) for i in range(a.shape[1])]
    # fixed summation order keeps the total reproducible
    return float(sum(e.sigma ** 2 for e in per_pair)), per_pair


def _fourier_gradient(shape, frequency, amplitude, grid) -> np.ndarray:
    w, h = shape
    rows, cols = grid
    u, v = frequency
    p = np.arange(w)[:, None]
    q = np.arange(h)[None, :]
    phase = np.exp(-2j * np.pi * (((u * p) % rows) / rows + ((v * q) % cols) / cols))
    return np.real(np.conj(amplitude) * phase)


def _kernel_from_pair(u: np.ndarray, v: np.ndarray, shape, operator) -> np.ndarray:
    """Pull ``u v^T`` back from conv-matrix space onto the kernel entries."""
    kind, rows, cols = operator
    w, h = shape
    if kind == "valid":
        out_r, out_c = rows - w + 1, cols - h + 1
        uu = u.reshape(out_r, out_c)
        vv = v.reshape(rows, cols)
        g = np.empty((w, h))
        for p in range(w):
            for q in range(h):
                g[p, q] = np.sum(uu * vv[p:p + out_r, q:q + out_c])
        return g
    uu = u.reshape(rows, cols)
    vv = v.reshape(rows, cols)
    g = np.empty((w, h))
    for p in range(w):
        for q in range(h):
            g[p, q] = np.sum(uu * np.roll(vv, shift=(-p, -q), axis=(0, 1)))
    return g


def penalty_gradient(param, est: SpectralEstimate, lam: float = 1.0) -> np.ndarray:
    """Gradient of ``(lam / 2) * sigma^2`` with respect to ``param``.

    ``param`` is a linear weight matrix or a single 2D kernel; ``est`` must
    have been computed from it.
    """
    a = np.asarray(param, dtype=float)
    if not est.has_witness:
        raise DegenerateWitness(f"{est.method.value} estimate carries no witness")
    if est.sigma == 0.0:
        return np.zeros_like(a)
    if est.method is Method.FOURIER_TRANSFORM:
        return lam * _fourier_gradient(a.shape, est.frequency, est.amplitude, est.grid)
    outer_grad = est.sigma
    if est.operator is None:
        return lam * outer_grad * np.outer(est.u, est.v)
    return lam * outer_grad * _kernel_from_pair(est.u, est.v, a.shape, est.operator)


def layer_penalty_gradient(param, per_pair, lam: float = 1.0) -> np.ndarray:
    """Gradient of ``(lam / 2) * penalty`` for the estimates from :func:`layer_penalty`."""
    a = np.asarray(param, dtype=float)
    if a.ndim == 2:
        return penalty_gradient(a, per_pair[0], lam)
    g = np.zeros_like(a)
    it = iter(per_pair)
    for o in range(a.shape[0]):
        for i in range(a.shape[1]):
            g[o, i] = penalty_gradient(a[o, i], next(it), lam)
    return g


def fft_penalty_batched(kernels, n):
    """Vectorized FFT penalty over every channel pair of a 4D kernel.

    Returns ``(sigmas, grad)`` where ``sigmas`` has shape ``(out, in)`` and
    ``grad`` is the gradient of ``0.5 * sum(sigmas**2)``.
    """
    k = np.asarray(kernels, dtype=float)
    spectrum = fft2(pad_kernel(k, n))
    rows, cols = spectrum.shape[-2:]
    idx = _dominant(spectrum)
    z = np.take_along_axis(spectrum.reshape(spectrum.shape[:-2] + (-1,)),
                           idx[..., None], axis=-1)[..., 0]
    u, v = np.divmod(idx, cols)
    w, h = k.shape[-2:]
    p = np.arange(w)[:, None]
    q = np.arange(h)[None, :]
    phase = np.exp(-2j * np.pi * (((u[..., None, None] * p) % rows) / rows
                                  + ((v[..., None, None] * q) % cols) / cols))
    grad = np.real(np.conj(z)[..., None, None] * phase)
    return np.abs(z), grad
