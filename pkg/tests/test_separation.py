import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fastsn.conv import circulant_conv_matrix
from fastsn.numeric import svd
from fastsn.separation import (SeparatedKernel, is_separable, separate_kernel,
                               separated_penalty, separated_penalty_batched,
                               separated_penalty_gradient)
from fastsn.spectral import spectral_norm_fft

from conftest import SOBEL, central_difference, loop_circular_conv


def random_rank1(rng, w, h):
    return np.outer(rng.standard_normal(w), rng.standard_normal(h))


class TestSeparateKernel:
    def test_sobel(self):
        sep = separate_kernel(SOBEL)
        np.testing.assert_allclose(sep.outer(), SOBEL, atol=1e-12)
        assert sep.residual_fro <= 1e-12
        col = sep.col / sep.col[0]
        row = sep.row / sep.row[0]
        np.testing.assert_allclose(col, [1, 2, 1], atol=1e-12)
        np.testing.assert_allclose(row, [1, 0, -1], atol=1e-12)
        assert sep.row[0] > 0  # first nonzero of the row factor is positive

    def test_scalar(self):
        sep = separate_kernel([[4.0]])
        np.testing.assert_allclose(sep.col, [2.0])
        np.testing.assert_allclose(sep.row, [2.0])
        assert sep.residual_fro == 0.0

    def test_negative_scalar(self):
        sep = separate_kernel([[-9.0]])
        np.testing.assert_allclose(sep.col, [-3.0])
        np.testing.assert_allclose(sep.row, [3.0])

    def test_rank_two_residual(self, rng):
        k = random_rank1(rng, 4, 3) + random_rank1(rng, 4, 3)
        s = svd(k).singular_values
        assert separate_kernel(k).residual_fro == pytest.approx(np.sqrt(np.sum(s[1:] ** 2)),
                                                               abs=1e-10)

    def test_residual_is_truncation_error(self, rng):
        k = rng.standard_normal((5, 3))
        sep = separate_kernel(k)
        assert np.linalg.norm(k - sep.outer()) == pytest.approx(sep.residual_fro, abs=1e-10)

    def test_factor_split_is_symmetric(self, rng):
        k = rng.standard_normal((3, 3))
        sep = separate_kernel(k)
        assert np.linalg.norm(sep.col) == pytest.approx(np.linalg.norm(sep.row), rel=1e-12)

    @pytest.mark.parametrize("shape", [(3, 3), (2, 5), (5, 2), (1, 4)])
    def test_random_rank1_reconstructs(self, rng, shape):
        for _ in range(10):
            k = random_rank1(rng, *shape)
            sep = separate_kernel(k)
            assert np.abs(sep.outer() - k).max() <= 1e-12 * max(1.0, np.abs(k).max())
            assert sep.residual_fro <= 1e-12 * max(1.0, np.linalg.norm(k))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_idempotent(self, w, h, seed):
        k = np.random.default_rng(seed).standard_normal((w, h))
        once = separate_kernel(k)
        twice = separate_kernel(once.outer())
        np.testing.assert_allclose(twice.outer(), once.outer(), atol=1e-12)

    def test_rejects_multichannel(self):
        with pytest.raises(ValueError):
            separate_kernel(np.zeros((1, 1, 3, 3)))


class TestIsSeparable:
    def test_sobel(self):
        assert is_separable(SOBEL)

    def test_identity(self):
        assert not is_separable(np.eye(3))

    def test_zero(self):
        assert is_separable(np.zeros((3, 3)))

    def test_noisy_outer_product(self, rng):
        k = random_rank1(rng, 3, 3) + 1e-14 * rng.standard_normal((3, 3))
        assert is_separable(k, tol=1e-8)

    def test_bad_tol(self):
        with pytest.raises(ValueError):
            is_separable(SOBEL, tol=0.0)


class TestSeparatedPenalty:
    def test_scalar(self):
        assert separated_penalty(separate_kernel([[1.0]]), 4) == pytest.approx(2.0)

    def test_nonnegative_rank1(self, rng):
        k = np.outer(rng.uniform(0.1, 1, 3), rng.uniform(0.1, 1, 4))
        sep = separate_kernel(k)
        expected = sep.col.sum() ** 2 + sep.row.sum() ** 2
        assert separated_penalty(sep, 6) == pytest.approx(expected, rel=1e-12)

    def test_sobel_factors_against_circulant_svd(self):
        sep = separate_kernel(SOBEL)
        s_r = svd(circulant_conv_matrix(sep.col[:, None], 8)).singular_values[0]
        s_c = svd(circulant_conv_matrix(sep.row[None, :], 8)).singular_values[0]
        assert spectral_norm_fft(sep.col[:, None], 8).sigma == pytest.approx(s_r, abs=1e-8)
        assert spectral_norm_fft(sep.row[None, :], 8).sigma == pytest.approx(s_c, abs=1e-8)
        assert separated_penalty(sep, 8) == pytest.approx(s_r ** 2 + s_c ** 2, abs=1e-8)

    def test_submultiplicative(self, rng):
        for _ in range(30):
            k = random_rank1(rng, 3, 3)
            sep = separate_kernel(k)
            whole = spectral_norm_fft(k, 6).sigma
            parts = (spectral_norm_fft(sep.col[:, None], 6).sigma
                     * spectral_norm_fft(sep.row[None, :], 6).sigma)
            assert whole <= parts * (1 + 1e-12)

    def test_batched_matches_single(self, rng):
        k = rng.standard_normal((3, 2, 3, 3))
        penalty, _, residual = separated_penalty_batched(k, 8)
        for o in range(3):
            for i in range(2):
                sep = separate_kernel(k[o, i])
                assert penalty[o, i] == pytest.approx(separated_penalty(sep, 8), rel=1e-10)
                assert residual[o, i] == pytest.approx(sep.residual_fro, abs=1e-10)


def test_circular_convolution_equivalence(rng):
    for _ in range(20):
        k = random_rank1(rng, 3, 3)
        sep = separate_kernel(k)
        a = rng.standard_normal((8, 8))
        direct = loop_circular_conv(a, k)
        staged = loop_circular_conv(loop_circular_conv(a, sep.col[:, None]), sep.row[None, :])
        assert np.abs(direct - staged).max() <= 1e-10


@pytest.mark.parametrize("shape", [(3, 3), (2, 4), (4, 2)])
def test_separated_penalty_gradient(rng, shape):
    def f(kern):
        return separated_penalty(separate_kernel(kern), 7)

    for _ in range(3):
        k = rng.standard_normal(shape)
        grad = separated_penalty_gradient(k, 7)
        for idx in np.ndindex(*shape):
            fd = central_difference(f, k, idx)
            assert abs(fd - grad[idx]) <= 1e-4 * max(1.0, abs(fd))


def test_gradient_of_zero_kernel_is_zero():
    np.testing.assert_array_equal(separated_penalty_gradient(np.zeros((3, 3)), 6),
                                  np.zeros((3, 3)))


def test_separated_kernel_outer():
    sep = SeparatedKernel(col=np.array([1.0, 2.0]), row=np.array([3.0]), residual_fro=0.0)
    np.testing.assert_array_equal(sep.outer(), [[3.0], [6.0]])
