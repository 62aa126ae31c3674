import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fastsn.errors import ConvergenceNotReached
from fastsn.numeric import fft2, ifft2, jacobi_svd_batched, power_iteration, svd

from conftest import SOBEL, matrix_with_spectrum

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def naive_dft2(m):
    m = np.asarray(m, dtype=float)
    rows, cols = m.shape
    out = np.zeros((rows, cols), dtype=complex)
    for u in range(rows):
        for v in range(cols):
            for p in range(rows):
                for q in range(cols):
                    out[u, v] += m[p, q] * np.exp(-2j * np.pi * (u * p / rows + v * q / cols))
    return out


class TestFft2:
    def test_one_point(self):
        np.testing.assert_allclose(fft2([[1.0]]), [[1.0]])

    def test_impulse(self):
        np.testing.assert_allclose(fft2([[1.0, 0.0], [0.0, 0.0]]), np.ones((2, 2)), atol=1e-15)

    def test_dc(self):
        np.testing.assert_allclose(fft2([[1.0, 1.0], [1.0, 1.0]]), [[4, 0], [0, 0]], atol=1e-15)

    @pytest.mark.parametrize("shape", [(3, 5), (6, 4), (7, 7), (9, 10), (1, 13)])
    def test_matches_definition(self, rng, shape):
        x = rng.standard_normal(shape)
        np.testing.assert_allclose(fft2(x), naive_dft2(x), atol=1e-10)

    @pytest.mark.parametrize("shape", [(16, 16), (12, 18), (67, 3), (2, 131), (30, 49)])
    def test_matches_numpy(self, rng, shape):
        # mixed radix, large primes (Bluestein) and composite lengths
        x = rng.standard_normal(shape)
        np.testing.assert_allclose(fft2(x), np.fft.fft2(x), atol=1e-10 * x.size)

    def test_batched_leading_axes(self, rng):
        x = rng.standard_normal((3, 2, 5, 6))
        np.testing.assert_allclose(fft2(x), np.fft.fft2(x), atol=1e-12)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            fft2(np.zeros((0, 3)))

    @settings(max_examples=40, deadline=None)
    @given(arrays(float, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=finite))
    def test_parseval(self, x):
        lhs = np.sum(np.abs(fft2(x)) ** 2)
        rhs = x.size * np.sum(x ** 2)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, rhs)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), finite, finite, st.integers(0, 2**32 - 1))
    def test_linearity(self, rows, cols, a, b, seed):
        r = np.random.default_rng(seed)
        x, y = r.standard_normal((2, rows, cols))
        lhs = fft2(a * x + b * y)
        rhs = a * fft2(x) + b * fft2(y)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(1.0, abs(a), abs(b)) * rows * cols)


class TestIfft2:
    def test_roundtrip(self, rng):
        x = rng.standard_normal((4, 4))
        np.testing.assert_allclose(ifft2(fft2(x)), x, atol=1e-12)

    def test_dc_spectrum(self):
        np.testing.assert_allclose(ifft2([[4, 0], [0, 0]]), np.ones((2, 2)), atol=1e-15)

    def test_one_point(self):
        np.testing.assert_allclose(ifft2([[1.0]]), [[1.0]])

    @pytest.mark.parametrize("shape", [(5, 7), (8, 8), (11, 6)])
    def test_roundtrip_odd_sizes(self, rng, shape):
        x = rng.standard_normal(shape)
        np.testing.assert_allclose(ifft2(fft2(x)), x, atol=1e-12)


class TestSvd:
    def test_diagonal(self):
        np.testing.assert_allclose(svd(np.diag([3.0, 1.0])).singular_values, [3, 1])

    def test_sobel_rank_one(self):
        s = svd(SOBEL).singular_values
        np.testing.assert_allclose(s, [2 * np.sqrt(3), 0, 0], atol=1e-12)

    def test_gram_oracle(self, rng):
        m = rng.standard_normal((3, 4))
        eig = np.linalg.eigvalsh(m.T @ m)[::-1][:3]
        np.testing.assert_allclose(svd(m).singular_values, np.sqrt(eig), atol=1e-9)

    @pytest.mark.parametrize("shape", [(1, 1), (1, 6), (6, 1), (5, 3), (3, 5), (10, 10), (64, 64)])
    def test_reconstruction_and_orthonormality(self, rng, shape):
        m = rng.standard_normal(shape)
        res = svd(m)
        s1 = res.singular_values[0]
        assert np.abs(res.reconstruct() - m).max() <= 1e-10 * max(1.0, s1)
        k = min(shape)
        np.testing.assert_allclose(res.left_vectors.T @ res.left_vectors, np.eye(k), atol=1e-12)
        np.testing.assert_allclose(res.right_vectors.T @ res.right_vectors, np.eye(k), atol=1e-12)
        assert np.all(np.diff(res.singular_values) <= 0)
        assert np.all(res.singular_values >= 0)

    def test_rank_deficient_left_vectors_completed(self):
        res = svd(np.zeros((4, 3)))
        np.testing.assert_allclose(res.singular_values, 0)
        np.testing.assert_allclose(res.left_vectors.T @ res.left_vectors, np.eye(3), atol=1e-12)

    def test_deterministic(self, rng):
        m = rng.standard_normal((7, 5))
        a, b = svd(m), svd(m.copy())
        assert np.array_equal(a.singular_values, b.singular_values)
        assert np.array_equal(a.left_vectors, b.left_vectors)

    def test_batched_matches_single(self, rng):
        stack = rng.standard_normal((6, 4, 3))
        s, _, _ = jacobi_svd_batched(stack)
        for i in range(6):
            np.testing.assert_allclose(s[i], svd(stack[i]).singular_values, atol=1e-13)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_permutation_invariance(self, rows, cols, seed):
        r = np.random.default_rng(seed)
        m = r.standard_normal((rows, cols))
        permuted = m[r.permutation(rows)][:, r.permutation(cols)]
        np.testing.assert_allclose(svd(permuted).singular_values, svd(m).singular_values,
                                   atol=1e-12)


class TestPowerIteration:
    def test_diagonal(self):
        sigma, u, v = power_iteration(np.diag([3.0, 1.0]), 500, 1e-12)
        assert abs(sigma - 3.0) < 1e-6
        assert abs(abs(u[0]) - 1) < 1e-6 and abs(abs(v[0]) - 1) < 1e-6

    def test_identity_one_step(self):
        # converges on the first check, so a cap of one iteration suffices
        sigma, _, _ = power_iteration(np.eye(2), max_iters=1, tol=1e-12)
        assert abs(sigma - 1.0) < 1e-15

    def test_tiny_gap_hits_cap(self, rng):
        m = matrix_with_spectrum([1.001, 1.0, 0.5, 0.2], rng)
        with pytest.raises(ConvergenceNotReached) as info:
            power_iteration(m, max_iters=3, tol=1e-9)
        assert info.value.sigma is not None and info.value.iterations == 3
        assert svd(m).singular_values[0] / svd(m).singular_values[1] == pytest.approx(1.001)

    def test_zero_matrix(self):
        sigma, _, _ = power_iteration(np.zeros((3, 2)), 5, 1e-6)
        assert sigma == 0.0

    def test_never_exceeds_oracle(self, rng):
        for _ in range(10):
            m = rng.standard_normal((6, 4))
            sigma, _, _ = power_iteration(m, 2000, 1e-10)
            assert sigma <= svd(m).singular_values[0] + 1e-10

    def test_converges_with_gap(self, rng):
        for _ in range(10):
            m = matrix_with_spectrum([5.5, 5.0, 1.0], rng)
            sigma, _, _ = power_iteration(m, 500, 1e-12)
            assert abs(sigma - svd(m).singular_values[0]) <= 1e-6 * 5.5

    def test_singular_pair(self, rng):
        m = matrix_with_spectrum([3.0, 1.0, 0.5], rng, rows=5, cols=3)
        sigma, u, v = power_iteration(m, 500, 1e-14)
        np.testing.assert_allclose(m @ v, sigma * u, atol=1e-6)

    def test_seeded_start_is_reproducible(self, rng):
        m = rng.standard_normal((5, 5))
        a = power_iteration(m, 50, 1e-3, seed=3)
        b = power_iteration(m, 50, 1e-3, seed=3)
        assert a[0] == b[0] and np.array_equal(a[1], b[1])

    @pytest.mark.parametrize("kwargs", [{"max_iters": 0}, {"tol": 0.0}])
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ValueError):
            power_iteration(np.eye(2), **{"max_iters": 5, "tol": 1e-6, **kwargs})
