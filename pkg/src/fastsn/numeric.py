"""Dense numerical substrate: 2D DFT, SVD and power iteration.

Matrices are plain ``numpy`` arrays. All transforms operate on the last
axes, so stacks of matrices (e.g. every channel pair of a conv layer) go
through in one call.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConvergenceNotReached, NumericalFailure

# Prime lengths above this go through Bluestein instead of a direct DFT.
_DIRECT_DFT_MAX = 64


@lru_cache(maxsize=None)
def _smallest_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=None)
def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    # reduce the exponent mod n before scaling keeps the angles exact-ish
    return np.exp(-2j * np.pi * (np.outer(k, k) % n) / n)


@lru_cache(maxsize=None)
def _twiddles(p: int, m: int) -> np.ndarray:
    n = p * m
    r = np.arange(p)[:, None]
    k = np.arange(m)[None, :]
    return np.exp(-2j * np.pi * ((r * k) % n) / n)


@lru_cache(maxsize=None)
def _bluestein_chirp(n: int):
    k = np.arange(n)
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    size = 1
    while size < 2 * n - 1:
        size *= 2
    b = np.zeros(size, dtype=complex)
    b[:n] = np.conj(chirp)
    b[size - n + 1:] = np.conj(chirp[1:])[::-1]
    return chirp, size, _fft_last(b)


def _bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    chirp, size, b_hat = _bluestein_chirp(n)
    a = np.zeros(x.shape[:-1] + (size,), dtype=complex)
    a[..., :n] = x * chirp
    conv = _ifft_last(_fft_last(a) * b_hat)
    return conv[..., :n] * chirp


def _fft_last(x: np.ndarray) -> np.ndarray:
    """Unnormalized DFT along the last axis, mixed radix decimation in time."""
    n = x.shape[-1]
    if n == 1:
        return x.astype(complex, copy=True)
    p = _smallest_factor(n)
    if p == n:
        if n <= _DIRECT_DFT_MAX:
            return x @ _dft_matrix(n)
        return _bluestein(x)
    m = n // p
    # sub[..., r, j] = x[..., j*p + r]
    sub = np.swapaxes(x.reshape(x.shape[:-1] + (m, p)), -1, -2)
    y = _fft_last(sub) * _twiddles(p, m)
    # out[..., k2*m + k1] = sum_r W_p^{r k2} y[..., r, k1]
    out = np.einsum("kr,...rm->...km", _dft_matrix(p), y)
    return out.reshape(x.shape[:-1] + (n,))


def _ifft_last(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    return np.conj(_fft_last(np.conj(x))) / n


def fft2(m) -> np.ndarray:
    """Unnormalized 2D DFT over the last two axes.

    ``out[u, v] = sum_{p,q} m[p, q] * exp(-2j*pi*(u*p/rows + v*q/cols))``.
    Any length is accepted; non-power-of-two sizes use mixed radix steps.
    """
    a = np.asarray(m)
    if a.ndim < 2 or a.shape[-1] == 0 or a.shape[-2] == 0:
        raise ValueError(f"fft2 needs a non-empty matrix, got shape {a.shape}")
    out = _fft_last(a)
    return np.swapaxes(_fft_last(np.swapaxes(out, -1, -2)), -1, -2)


def ifft2(m) -> np.ndarray:
    """Inverse of :func:`fft2`; carries the ``1/(rows*cols)`` factor."""
    a = np.asarray(m, dtype=complex)
    if a.ndim < 2 or a.shape[-1] == 0 or a.shape[-2] == 0:
        raise ValueError(f"ifft2 needs a non-empty matrix, got shape {a.shape}")
    rows, cols = a.shape[-2:]
    return np.conj(fft2(np.conj(a))) / (rows * cols)


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``m = left_vectors @ diag(singular_values) @ right_vectors.T``."""

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: every column pair meets once, n/2 disjoint per round."""
    players = list(range(n + (n % 2)))
    rounds = []
    for _ in range(len(players) - 1):
        half = len(players) // 2
        pairs = [(players[i], players[-1 - i]) for i in range(half)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            rounds.append((np.array([a for a, _ in pairs]), np.array([b for _, b in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_svd_batched(a: np.ndarray, max_sweeps: int = 60, tol: float = 1e-15):
    """One-sided (Hestenes) Jacobi on a stack of tall matrices.

    ``a`` has shape ``(batch, m, n)`` with ``m >= n``. Returns
    ``(s, u, v)`` with shapes ``(batch, n)``, ``(batch, m, n)``,
    ``(batch, n, n)``, singular values sorted descending. Left vectors of
    zero singular values are completed to an orthonormal set.
    """
    work = np.array(a, dtype=float, copy=True)
    batch, m, n = work.shape
    v = np.broadcast_to(np.eye(n), (batch, n, n)).copy()
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        rotated = False
        for i, j in rounds:
            ai = work[:, :, i]
            aj = work[:, :, j]
            alpha = np.einsum("bmk,bmk->bk", ai, ai)
            beta = np.einsum("bmk,bmk->bk", aj, aj)
            gamma = np.einsum("bmk,bmk->bk", ai, aj)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            safe_gamma = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * safe_gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(active, c, 1.0)[:, None, :]
            s = np.where(active, s, 0.0)[:, None, :]
            work[:, :, i], work[:, :, j] = c * ai - s * aj, s * ai + c * aj
            vi = v[:, :, i]
            vj = v[:, :, j]
            v[:, :, i], v[:, :, j] = c * vi - s * vj, s * vi + c * vj
        if not rotated:
            break
    else:
        raise NumericalFailure(f"Jacobi SVD did not converge in {max_sweeps} sweeps")

    sigma = np.linalg.norm(work, axis=1)
    order = np.argsort(-sigma, axis=1, kind="stable")
    sigma = np.take_along_axis(sigma, order, axis=1)
    work = np.take_along_axis(work, order[:, None, :], axis=2)
    v = np.take_along_axis(v, order[:, None, :], axis=2)

    u = np.zeros_like(work)
    for b in range(batch):
        scale = sigma[b, 0] if sigma[b, 0] > 0 else 1.0
        for k in range(n):
            if sigma[b, k] > 1e-14 * scale:
                u[b, :, k] = work[b, :, k] / sigma[b, k]
            else:
                u[b, :, k] = _complete_basis(u[b, :, :k], m)
    return sigma, u, v


def _complete_basis(basis: np.ndarray, m: int) -> np.ndarray:
    """A unit vector orthogonal to the columns of ``basis``."""
    for e in np.eye(m):
        w = e - basis @ (basis.T @ e)
        w = w - basis @ (basis.T @ w)
        norm = np.linalg.norm(w)
        if norm > 1e-8:
            return w / norm
    raise NumericalFailure("could not complete orthonormal basis")


def svd(m) -> SvdResult:
    """Thin SVD by one-sided Jacobi.

    Deterministic for identical input. Wide matrices are handled through
    their transpose so the rotated dimension is always the smaller one.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"svd needs a non-empty 2D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalFailure("svd input contains non-finite entries")
    wide = a.shape[0] < a.shape[1]
    s, u, v = jacobi_svd_batched((a.T if wide else a)[None])
    s, u, v = s[0], u[0], v[0]
    if wide:
        u, v = v, u
    return SvdResult(singular_values=s, left_vectors=u, right_vectors=v)


def power_iteration(m, max_iters: int = 500, tol: float = 1e-10, seed: int = 0):
    """Dominant singular triple of ``m`` by alternating ``m @ v`` / ``m.T @ u``.

    Returns ``(sigma, u, v)`` with ``m @ v ~= sigma * u``. Converged once
    ``|sigma_t - sigma_{t-1}| < tol * max(1, sigma_t)``; otherwise raises
    :class:`ConvergenceNotReached` carrying the last estimate.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    a = np.asarray(m, dtype=float)
    rows, cols = a.shape
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(cols)
    while not np.any(v):
        v = rng.standard_normal(cols)
    v /= np.linalg.norm(v)

    u = a @ v
    sigma = float(np.linalg.norm(u))
    if sigma == 0.0:
        # zero operator (or a start vector in the null space of a zero map)
        if not np.any(a):
            u = np.zeros(rows)
            u[0] = 1.0
            return 0.0, u, v
    u /= sigma if sigma > 0 else 1.0
    for it in range(1, max_iters + 1):
        v = a.T @ u
        v_norm = float(np.linalg.norm(v))
        if v_norm == 0.0:
            return 0.0, u, v
        v /= v_norm
        u = a @ v
        new_sigma = float(np.linalg.norm(u))
        u /= new_sigma if new_sigma > 0 else 1.0
        if abs(new_sigma - sigma) < tol * max(1.0, new_sigma):
            return new_sigma, u, v
        sigma = new_sigma
    raise ConvergenceNotReached(
        f"power iteration not converged after {max_iters} iterations",
        sigma=sigma, u=u, v=v, iterations=max_iters,
    )
