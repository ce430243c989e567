"""GP core: kernels, fitting, prediction and the marginal likelihood.

Reference values are frozen closed-form evaluations; the dense oracles use
``scipy.stats.multivariate_normal`` and explicit matrix inverses.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from practicalbo.errors import InvalidArgumentError, NumericalError
from practicalbo.gp import (
    MATERN52,
    SQUARED_EXPONENTIAL,
    GpHyperparams,
    MarginalLikelihood,
    factorize,
    gp_fit,
    gp_predict,
    kernel_m52,
    kernel_matrix,
    kernel_se,
    log_marginal_likelihood,
    norm_cdf,
    norm_pdf,
    squared_distance,
)

KERNELS = [SQUARED_EXPONENTIAL, MATERN52]


def hyper(amplitude=1.0, ls=(1.0,), noise=0.0, mean=0.0):
    return GpHyperparams(amplitude, list(ls), noise, mean)


def dense_kernel(X1, X2, h, kind):
    """Element-by-element kernel, independent of the vectorized path."""
    out = np.empty((len(X1), len(X2)))
    for i, a in enumerate(X1):
        for j, b in enumerate(X2):
            r2 = sum((ai - bi) ** 2 / l**2 for ai, bi, l in zip(a, b, h.length_scales))
            if kind == SQUARED_EXPONENTIAL:
                out[i, j] = h.amplitude * math.exp(-0.5 * r2)
            else:
                r = math.sqrt(5.0 * r2)
                out[i, j] = h.amplitude * (1 + r + 5.0 * r2 / 3.0) * math.exp(-r)
    return out


class TestSquaredDistance:
    def test_identical_points(self):
        assert squared_distance([0.3, 0.7], [0.3, 0.7], [0.2, 5.0]) == 0.0

    def test_one_length_scale_apart(self):
        assert squared_distance([0.0], [2.0], [2.0]) == pytest.approx(1.0)

    def test_ard_sum(self):
        assert squared_distance([1.0, 0.0], [0.0, 3.0], [1.0, 3.0]) == pytest.approx(2.0)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            squared_distance([0.0, 1.0], [0.0], [1.0])


class TestKernels:
    def test_se_zero_distance(self):
        assert kernel_se([0.5], [0.5], hyper()) == pytest.approx(1.0)

    def test_se_unit_distance(self):
        assert kernel_se([0.0], [1.0], hyper()) == pytest.approx(0.60653066, abs=1e-8)

    def test_se_amplitude_linear(self):
        assert kernel_se([0.0], [1.0], hyper(amplitude=2.5)) == pytest.approx(2.5 * math.exp(-0.5))

    def test_m52_zero_distance(self):
        assert kernel_m52([0.1, 0.2], [0.1, 0.2], hyper(amplitude=1.7, ls=(1.0, 1.0))) == pytest.approx(1.7)

    def test_m52_unit_distance(self):
        expected = (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))
        assert kernel_m52([0.0], [1.0], hyper()) == pytest.approx(expected, rel=1e-12)
        assert kernel_m52([0.0], [1.0], hyper()) == pytest.approx(0.52399, abs=1e-5)

    def test_m52_monotone_decay(self):
        h = hyper(amplitude=1.3)
        far = kernel_m52([0.0], [1.0], h)
        near = kernel_m52([0.0], [0.1], h)
        assert far < near < h.amplitude

    @pytest.mark.parametrize("kind", KERNELS)
    def test_matrix_matches_elementwise(self, kind):
        rng = np.random.default_rng(0)
        X1, X2 = rng.random((6, 3)), rng.random((4, 3))
        h = hyper(amplitude=0.8, ls=(0.3, 1.1, 0.05))
        np.testing.assert_allclose(kernel_matrix(X1, X2, h, kind), dense_kernel(X1, X2, h, kind), rtol=1e-12)

    def test_unknown_kernel(self):
        with pytest.raises(InvalidArgumentError):
            kernel_matrix(np.zeros((1, 1)), np.zeros((1, 1)), hyper(), "rbf")


class TestHyperparams:
    def test_length_scales_read_only(self):
        h = hyper(ls=(0.1, 0.2))
        with pytest.raises(ValueError):
            h.length_scales[0] = 3.0

    @pytest.mark.parametrize(
        "bad",
        [dict(amplitude=0.0), dict(ls=(0.0,)), dict(noise=-1e-3), dict(mean=float("nan"))],
    )
    def test_invalid_rejected_by_fit(self, bad):
        with pytest.raises(InvalidArgumentError):
            gp_fit([[0.5]], [1.0], hyper(**bad))

    def test_dict_round_trip(self):
        h = hyper(amplitude=1.5, ls=(0.2, 0.7), noise=1e-4, mean=-0.3)
        back = GpHyperparams.from_dict(h.to_dict())
        assert back.to_dict() == h.to_dict()


class TestFit:
    def test_scalar_factor(self):
        post = gp_fit([[0.4]], [2.0], hyper(amplitude=1.5, noise=0.5))
        assert post.chol[0, 0] == pytest.approx(math.sqrt(2.0))

    def test_duplicate_rows_use_jitter(self):
        X = np.array([[0.2, 0.3], [0.2, 0.3], [0.9, 0.1]])
        post = gp_fit(X, [1.0, 1.0, 0.0], hyper(ls=(0.5, 0.5)))
        assert post.jitter > 0
        assert np.all(np.isfinite(post.alpha))

    @pytest.mark.parametrize("kind", KERNELS)
    def test_reconstruction(self, kind):
        rng = np.random.default_rng(1)
        X = rng.random((20, 3))
        h = hyper(amplitude=1.2, ls=(0.4, 0.9, 0.6), noise=1e-3)
        post = gp_fit(X, rng.standard_normal(20), h, kind)
        K = kernel_matrix(X, X, h, kind) + h.noise_variance * np.eye(20)
        err = np.linalg.norm(post.chol @ post.chol.T - K) / np.linalg.norm(K)
        assert err <= 1e-8

    def test_arrays_are_frozen(self):
        post = gp_fit([[0.1], [0.9]], [0.0, 1.0], hyper())
        for arr in (post.inputs, post.targets, post.chol, post.alpha):
            assert not arr.flags.writeable

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            gp_fit([[0.1], [0.2]], [1.0], hyper())
        with pytest.raises(InvalidArgumentError):
            gp_fit([[0.1, 0.2]], [1.0], hyper())

    def test_hopeless_matrix_raises(self):
        K = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NumericalError):
            factorize(K)


class TestPredict:
    @pytest.mark.parametrize("kind", KERNELS)
    def test_noise_free_interpolation(self, kind):
        rng = np.random.default_rng(2)
        X = rng.random((8, 2))
        y = np.sin(6 * X[:, 0]) + X[:, 1]
        post = gp_fit(X, y, hyper(ls=(0.3, 0.3)), kind)
        for xi, yi in zip(X, y):
            m = gp_predict(post, xi)
            assert m.mean == pytest.approx(yi, abs=1e-6)
            assert m.variance == pytest.approx(0.0, abs=1e-6)

    def test_single_point_hand_solve(self):
        h = hyper(amplitude=2.0, ls=(0.5,), noise=0.3)
        post = gp_fit([[0.2]], [1.7], h)
        x = np.array([0.6])
        m = gp_predict(post, x)
        k = kernel_m52([0.6], [0.2], h)
        assert m.mean == pytest.approx(k / 2.3 * 1.7, rel=1e-12)
        assert m.variance == pytest.approx(2.0 - k * k / 2.3, rel=1e-12)

    def test_reverts_to_prior_far_away(self):
        h = hyper(amplitude=1.4, ls=(0.01,), mean=0.25)
        post = gp_fit([[0.0], [0.05]], [3.0, -2.0], h)
        m = gp_predict(post, np.array([1.0]))
        assert m.mean == pytest.approx(0.25, abs=1e-9)
        assert m.variance == pytest.approx(1.4, abs=1e-9)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        post = gp_fit(rng.random((5, 2)), rng.standard_normal(5), hyper(ls=(0.4, 0.2), noise=0.01))
        Q = rng.random((7, 2))
        batch = gp_predict(post, Q)
        for i, q in enumerate(Q):
            single = gp_predict(post, q)
            assert single.mean == pytest.approx(batch.mean[i], rel=1e-12)
            assert single.variance == pytest.approx(batch.variance[i], rel=1e-10, abs=1e-15)

    def test_matches_dense_inverse(self):
        rng = np.random.default_rng(4)
        X, Q = rng.random((6, 2)), rng.random((3, 2))
        y = rng.standard_normal(6)
        h = hyper(amplitude=0.7, ls=(0.5, 0.3), noise=0.05, mean=0.2)
        post = gp_fit(X, y, h)
        Kinv = np.linalg.inv(dense_kernel(X, X, h, MATERN52) + h.noise_variance * np.eye(6))
        Ks = dense_kernel(Q, X, h, MATERN52)
        mean = h.mean + Ks @ Kinv @ (y - h.mean)
        var = h.amplitude - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)
        m = gp_predict(post, Q)
        np.testing.assert_allclose(m.mean, mean, rtol=1e-9)
        np.testing.assert_allclose(m.variance, var, rtol=1e-8)

    def test_query_width_checked(self):
        post = gp_fit([[0.1, 0.2]], [0.0], hyper(ls=(1.0, 1.0)))
        with pytest.raises(InvalidArgumentError):
            gp_predict(post, np.array([0.1]))


class TestLogMarginalLikelihood:
    def test_standard_scalar(self):
        assert log_marginal_likelihood([[0.3]], [0.0], hyper()) == pytest.approx(-0.91893853, abs=1e-8)

    def test_zero_residual_scalar(self):
        s = 2.5
        value = log_marginal_likelihood([[0.3]], [1.2], hyper(amplitude=s, mean=1.2))
        assert value == pytest.approx(-0.5 * math.log(2 * math.pi * s), rel=1e-12)

    @pytest.mark.parametrize("n", [2, 5, 10])
    @pytest.mark.parametrize("kind", KERNELS)
    def test_dense_oracle(self, n, kind):
        rng = np.random.default_rng(n)
        X = rng.random((n, 2))
        y = rng.standard_normal(n)
        h = hyper(amplitude=1.3, ls=(0.4, 0.8), noise=0.02, mean=0.1)
        cov = dense_kernel(X, X, h, kind) + h.noise_variance * np.eye(n)
        oracle = stats.multivariate_normal(np.full(n, h.mean), cov).logpdf(y)
        assert log_marginal_likelihood(X, y, h, kind) == pytest.approx(oracle, rel=1e-8)

    def test_cached_evaluator_agrees(self):
        rng = np.random.default_rng(9)
        X, y = rng.random((7, 3)), rng.standard_normal(7)
        lml = MarginalLikelihood(X, y)
        for _ in range(5):
            h = hyper(amplitude=rng.uniform(0.5, 2), ls=rng.uniform(0.1, 1, 3), noise=1e-3, mean=rng.normal())
            assert lml(h) == pytest.approx(log_marginal_likelihood(X, y, h), rel=1e-10)


class TestNormal:
    def test_cdf_values(self):
        assert norm_cdf(0.0) == 0.5
        assert norm_cdf(1.0) == pytest.approx(0.841344746, abs=1e-7)

    def test_pdf_mode(self):
        assert norm_pdf(0.0) == pytest.approx(0.39894228, abs=1e-8)

    def test_cdf_against_integration(self):
        from scipy.integrate import quad

        for z in (-2.0, -0.3, 0.7, 1.9):
            integral, _ = quad(norm_pdf, -np.inf, z)
            assert norm_cdf(z) == pytest.approx(integral, abs=1e-9)


class TestPsdProperty:
    @settings(max_examples=200, deadline=None)
    @given(
        n=st.integers(1, 50),
        d=st.integers(1, 8),
        seed=st.integers(0, 2**32 - 1),
        kind=st.sampled_from(KERNELS),
    )
    def test_factorization_succeeds(self, n, d, seed, kind):
        rng = np.random.default_rng(seed)
        X = rng.random((n, d))
        h = hyper(
            amplitude=float(np.exp(rng.normal())),
            ls=np.exp(np.log(0.1) + rng.normal(size=d)),
            noise=float(np.exp(np.log(1e-3) + rng.normal())),
        )
        K = kernel_matrix(X, X, h, kind)
        np.testing.assert_allclose(K, K.T, rtol=0, atol=0)
        K[np.diag_indices(n)] += h.noise_variance
        _, jitter = factorize(K, h.amplitude + h.noise_variance)
        assert jitter <= 1e-8 * (h.amplitude + h.noise_variance)
