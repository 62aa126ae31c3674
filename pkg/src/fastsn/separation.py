"""Rank-1 separation of 2D kernels and the penalty of the separated layers.

A kernel ``K`` (``w x h``) is replaced by its best rank-1 approximation
``outer(r, c)`` with ``r = sqrt(s1) u1`` and ``c = sqrt(s1) v1``. The two
factors act as a ``w x 1`` and a ``1 x h`` convolution, each of which gets
its own Fourier spectral norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import as_kernel
from .numeric import jacobi_svd_batched, svd
from .spectral import _dominant, pad_kernel
from .numeric import fft2


@dataclass(frozen=True)
class SeparatedKernel:
    col: np.ndarray  # r, length w
    row: np.ndarray  # c, length h
    residual_fro: float

    def outer(self) -> np.ndarray:
        return np.outer(self.col, self.row)


def _sign_normalize(r: np.ndarray, c: np.ndarray):
    nz = np.flatnonzero(np.abs(c) > 0)
    if nz.size and c[nz[0]] < 0:
        return -r, -c
    return r, c


def separate_kernel(k) -> SeparatedKernel:
    """Best rank-1 factorization of a single-channel kernel.

    The leading singular value is split evenly between the factors and the
    first nonzero entry of the row factor is made positive.
    """
    k = as_kernel(k, single_channel=True)
    res = svd(k)
    s = res.singular_values
    root = np.sqrt(s[0])
    r, c = _sign_normalize(root * res.left_vectors[:, 0], root * res.right_vectors[:, 0])
    residual = float(np.sqrt(np.sum(s[1:] ** 2)))
    return SeparatedKernel(col=r, row=c, residual_fro=residual)


def is_separable(k, tol: float = 1e-8) -> bool:
    """True when ``sigma_2 <= tol * sigma_1`` (the zero kernel counts)."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    k = as_kernel(k, single_channel=True)
    s = svd(k).singular_values
    if s.size < 2 or s[0] == 0.0:
        return True
    return bool(s[1] <= tol * s[0])


def _factor_norm(vec: np.ndarray, n, as_column: bool):
    """Fourier norm of a 1-D factor placed as a ``w x 1`` or ``1 x h`` kernel.

    Works on stacks of vectors (leading axes). Returns ``(amplitude, phase)``
    where ``phase[..., p]`` is the DFT weight of factor entry ``p`` at the
    dominant frequency, so ``amplitude = sum_p vec[..., p] * phase[..., p]``.
    """
    kern = vec[..., :, None] if as_column else vec[..., None, :]
    spectrum = fft2(pad_kernel(kern, n))
    rows, cols = spectrum.shape[-2:]
    idx = _dominant(spectrum)
    z = np.take_along_axis(spectrum.reshape(spectrum.shape[:-2] + (-1,)),
                           idx[..., None], axis=-1)[..., 0]
    fu, fv = np.divmod(idx, cols)
    p = np.arange(vec.shape[-1])
    if as_column:
        phase = np.exp(-2j * np.pi * ((fu[..., None] * p) % rows) / rows)
    else:
        phase = np.exp(-2j * np.pi * ((fv[..., None] * p) % cols) / cols)
    return z, phase


def separated_penalty(sep: SeparatedKernel, n) -> float:
    """``sigma_fft(r)^2 + sigma_fft(c)^2`` for the two 1-D layers."""
    zr, _ = _factor_norm(np.asarray(sep.col, dtype=float), n, as_column=True)
    zc, _ = _factor_norm(np.asarray(sep.row, dtype=float), n, as_column=False)
    return float(abs(zr) ** 2 + abs(zc) ** 2)


def separated_penalty_batched(kernels, n):
    """Separated penalty and its exact gradient for a stack of 2D kernels.

    ``kernels`` has shape ``(..., w, h)``. Returns ``(penalty, grad,
    residual_fro)`` with ``penalty`` and ``residual_fro`` of shape ``(...)``
    and ``grad`` the gradient of ``penalty`` with respect to each kernel
    (not halved). Differentiation goes through the leading singular triple
    via first-order SVD perturbation; it is exact wherever ``s1`` is simple
    and the dominant frequencies are untied.
    """
    k = np.asarray(kernels, dtype=float)
    lead = k.shape[:-2]
    w, h = k.shape[-2:]
    flat = k.reshape((-1, w, h))
    if w >= h:
        s, U, V = jacobi_svd_batched(flat)
    else:
        s, V, U = jacobi_svd_batched(np.swapaxes(flat, 1, 2))
    s1 = s[:, 0]
    u1 = U[:, :, 0]
    v1 = V[:, :, 0]
    root = np.sqrt(s1)
    zr, ph_r = _factor_norm(root[:, None] * u1, n, as_column=True)
    zc, ph_c = _factor_norm(root[:, None] * v1, n, as_column=False)
    penalty = np.abs(zr) ** 2 + np.abs(zc) ** 2
    residual = np.sqrt(np.sum(s[:, 1:] ** 2, axis=1))

    grad = np.zeros_like(flat)
    live = s1 > 0
    if np.any(live):
        safe = np.where(live, s1, 1.0)
        # penalty = s1 * (|<u1, phase_r>|^2 + |<v1, phase_c>|^2)
        ab = penalty / safe
        gu = 2.0 * root[:, None] * np.real(np.conj(zr)[:, None] * ph_r)
        gv = 2.0 * root[:, None] * np.real(np.conj(zc)[:, None] * ph_c)
        grad += ab[:, None, None] * u1[:, :, None] * v1[:, None, :]
        kk = s.shape[1]
        for j in range(1, kk):
            sj = s[:, j]
            denom = safe ** 2 - sj ** 2
            denom = np.where(np.abs(denom) > 1e-300, denom, 1e-300)
            cu = np.einsum("bm,bm->b", gu, U[:, :, j]) / denom
            cv = np.einsum("bm,bm->b", gv, V[:, :, j]) / denom
            uj_v1 = U[:, :, j, None] * v1[:, None, :]
            u1_vj = u1[:, :, None] * V[:, None, :, j]
            grad += (cu * safe + cv * sj)[:, None, None] * uj_v1
            grad += (cu * sj + cv * safe)[:, None, None] * u1_vj
        # directions outside the thin factors (rectangular kernels)
        gu_perp = gu - np.einsum("bmk,bk->bm", U, np.einsum("bmk,bm->bk", U, gu))
        gv_perp = gv - np.einsum("bmk,bk->bm", V, np.einsum("bmk,bm->bk", V, gv))
        grad += (gu_perp / safe[:, None])[:, :, None] * v1[:, None, :]
        grad += u1[:, :, None] * (gv_perp / safe[:, None])[:, None, :]
        grad[~live] = 0.0
    return (penalty.reshape(lead), grad.reshape(k.shape), residual.reshape(lead))


def separated_penalty_gradient(k, n) -> np.ndarray:
    """Gradient of ``separated_penalty(separate_kernel(k), n)`` w.r.t. ``k``."""
    k = as_kernel(k, single_channel=True)
    return separated_penalty_batched(k[None], n)[1][0]
