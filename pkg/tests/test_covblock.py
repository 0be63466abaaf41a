"""Covariance assembly, Schur likelihood, prediction, and marginalization."""

import numpy as np
import pytest

from mgcp.covblock import (
    OutputData,
    assemble_covariance,
    dense_from_blocks,
    log_likelihood,
    log_likelihood_dense,
    log_likelihood_schur,
    marginalize_sources,
    predict,
    reference_cholesky,
    stack_responses,
)
from mgcp.exceptions import DataError, IndefiniteCovarianceError
from mgcp.kernels import Hyperparameters, KernelParams

from .conftest import random_dataset, random_theta
from .oracles import dense_cov_scalar, dense_logpdf, dense_predict


def k(alpha, *lams):
    return KernelParams(alpha=alpha, log_lambda=np.log(lams))


def zero_theta(q, d=1, sigma=1.0):
    """All kernel scales zero: only noise survives on the diagonal."""
    return Hyperparameters(
        source_kernels=[k(0.0, *([1.0] * d)) for _ in range(q)],
        transfer_kernels=[k(0.0, *([1.0] * d)) for _ in range(q)],
        target_kernel=k(0.0, *([1.0] * d)),
        log_sigmas=np.full(q + 1, np.log(sigma)),
    )


class TestOutputData:
    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            OutputData([[0.0], [np.inf]], [1.0, 2.0])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(DataError):
            OutputData([[0.0], [1.0]], [1.0])


class TestAssembly:
    def test_noise_only_gives_scaled_identity(self):
        data = [
            OutputData([[0.0]], [0.5], role=0),
            OutputData([[1.0]], [1.0], role="target"),
        ]
        bundle = assemble_covariance(data, zero_theta(1), jitter=0.25, keep_dense=True)
        np.testing.assert_allclose(bundle.dense_full, 1.25 * np.eye(2), atol=1e-15)

    def test_zero_transfer_scales_zero_cross_blocks(self, rng):
        data = random_dataset(rng, q=3)
        theta = random_theta(rng, q=3)
        theta.transfer_kernels = [
            KernelParams(0.0, kk.log_lambda) for kk in theta.transfer_kernels
        ]
        bundle = assemble_covariance(data, theta, jitter=1e-8)
        for blk in bundle.cross_blocks:
            assert np.all(blk == 0.0)

    @pytest.mark.parametrize("full", [False, True])
    def test_matches_entrywise_scalar_assembly(self, full, rng):
        data = random_dataset(rng, q=3, d=2, n=10, n_t=5)
        theta = random_theta(rng, q=3, d=2, full=full)
        bundle = assemble_covariance(data, theta, jitter=1e-8, keep_dense=True)
        C = dense_cov_scalar(data, theta, jitter=1e-8)
        np.testing.assert_allclose(bundle.dense_full, C, atol=1e-12)

    def test_jitter_escalation_raises_for_hopeless_matrix(self):
        # identical inputs, no noise: singular; three x10 escalations of the
        # explicit 1e-30 jitter stay below float resolution, so it must fail
        data = [OutputData([[0.0], [0.0]], [1.0, -1.0], role="target")]
        theta = Hyperparameters(
            source_kernels=[],
            transfer_kernels=[],
            target_kernel=k(1.0, 1.0),
            log_sigmas=[-250.0],
        )
        with pytest.raises(IndefiniteCovarianceError):
            assemble_covariance(data, theta, jitter=1e-30)

    def test_escalation_rescues_singular_matrix(self):
        # same singular matrix with jitter=0 escalates to the relative
        # default and factorizes
        data = [OutputData([[0.0], [0.0]], [1.0, -1.0], role="target")]
        theta = Hyperparameters(
            source_kernels=[],
            transfer_kernels=[],
            target_kernel=k(1.0, 1.0),
            log_sigmas=[-250.0],
        )
        bundle = assemble_covariance(data, theta, jitter=0.0)
        assert bundle.jitter > 0.0

    def test_negative_jitter_rejected(self, small_problem):
        data, theta = small_problem
        with pytest.raises(DataError):
            assemble_covariance(data, theta, jitter=-1.0)

    def test_full_variant_populates_source_source(self, rng):
        data = random_dataset(rng, q=2)
        theta = random_theta(rng, q=2, full=True)
        bundle = assemble_covariance(data, theta, jitter=1e-8)
        assert bundle.structure == "full"
        assert (0, 1) in bundle.source_source_blocks
        assert bundle.dense_factorization is not None


class TestLikelihood:
    def test_identity_zero_responses(self):
        data = [
            OutputData([[0.0]], [0.0], role=0),
            OutputData([[5.0], [9.0]], [0.0, 0.0], role="target"),
        ]
        bundle = assemble_covariance(data, zero_theta(1), jitter=0.0)
        val = log_likelihood_schur(bundle, np.zeros(3))
        assert val == pytest.approx(-1.5 * np.log(2 * np.pi), abs=1e-12)

    def test_identity_quadratic(self):
        data = [OutputData([[0.0], [4.0]], [1.0, -1.0], role="target")]
        bundle = assemble_covariance(data, zero_theta(0), jitter=0.0)
        val = log_likelihood_schur(bundle, np.array([1.0, -1.0]))
        assert val == pytest.approx(-1.0 - np.log(2 * np.pi), abs=1e-12)

    def test_matches_dense_oracle_random(self, rng):
        for _ in range(10):
            data = random_dataset(rng, q=3, n=8, n_t=4)
            theta = random_theta(rng, q=3)
            bundle = assemble_covariance(data, theta, jitter=1e-8)
            y = stack_responses(data)
            fast = log_likelihood_schur(bundle, y)
            C = dense_cov_scalar(data, theta, jitter=bundle.jitter)
            slow = dense_logpdf(C, y)
            assert fast == pytest.approx(slow, rel=1e-8)

    def test_full_variant_matches_dense_oracle(self, rng):
        data = random_dataset(rng, q=2, n=6, n_t=4)
        theta = random_theta(rng, q=2, full=True)
        bundle = assemble_covariance(data, theta, jitter=1e-8)
        y = stack_responses(data)
        C = dense_cov_scalar(data, theta, jitter=bundle.jitter)
        assert log_likelihood(bundle, y) == pytest.approx(
            dense_logpdf(C, y), rel=1e-8
        )

    def test_schur_requires_block_structure(self, rng):
        data = random_dataset(rng, q=2)
        theta = random_theta(rng, q=2, full=True)
        bundle = assemble_covariance(data, theta)
        with pytest.raises(DataError):
            log_likelihood_schur(bundle, stack_responses(data))

    def test_shape_mismatch(self, small_problem):
        data, theta = small_problem
        bundle = assemble_covariance(data, theta)
        with pytest.raises(DataError):
            log_likelihood_schur(bundle, np.zeros(3))


class TestReferenceCholesky:
    def test_matches_numpy(self, rng):
        A = rng.standard_normal((30, 30))
        C = A @ A.T + 30 * np.eye(30)
        np.testing.assert_allclose(
            reference_cholesky(C), np.linalg.cholesky(C), atol=1e-9
        )

    def test_rejects_indefinite(self):
        with pytest.raises(np.linalg.LinAlgError):
            reference_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_dense_loglik_matches_numpy_logpdf(self, rng):
        A = rng.standard_normal((12, 12))
        C = A @ A.T + 12 * np.eye(12)
        y = rng.standard_normal(12)
        assert log_likelihood_dense(C, y) == pytest.approx(
            dense_logpdf(C, y), rel=1e-12
        )


class TestPredict:
    @pytest.mark.parametrize("full", [False, True])
    def test_matches_dense_oracle(self, full, rng):
        data = random_dataset(rng, q=3, d=2, n=9, n_t=5)
        theta = random_theta(rng, q=3, d=2, full=full)
        query = rng.uniform(0, 3, (7, 2))
        bundle = assemble_covariance(data, theta, jitter=1e-8)
        pred = predict(bundle, data, theta, query)
        C = dense_cov_scalar(data, theta, jitter=bundle.jitter)
        mean, var = dense_predict(C, data, theta, query)
        np.testing.assert_allclose(pred.mean, mean, atol=1e-8)
        np.testing.assert_allclose(pred.variance, np.maximum(var, 0), atol=1e-8)

    def test_distant_query_reverts_to_prior(self, rng):
        data = random_dataset(rng, q=2, x_scale=1.0)
        theta = random_theta(rng, q=2)
        bundle = assemble_covariance(data, theta, jitter=1e-10)
        query = np.array([[1e6]])
        pred = predict(bundle, data, theta, query)
        prior = sum(kk.alpha**2 for kk in theta.transfer_kernels)
        prior += theta.target_kernel.alpha**2
        assert pred.mean[0] == pytest.approx(0.0, abs=1e-10)
        assert pred.variance[0] == pytest.approx(prior, rel=1e-10)

    def test_noiseless_target_interpolates(self):
        x = np.linspace(0, 2, 6)[:, None]
        y = np.sin(2 * x[:, 0])
        data = [OutputData(x, y, role="target")]
        theta = Hyperparameters(
            source_kernels=[],
            transfer_kernels=[],
            target_kernel=k(1.0, 0.5),
            log_sigmas=[np.log(1e-6)],
        )
        bundle = assemble_covariance(data, theta, jitter=1e-8)
        pred = predict(bundle, data, theta, x)
        np.testing.assert_allclose(pred.mean, y, atol=1e-4)

    def test_include_noise_adds_variance(self, small_problem):
        data, theta = small_problem
        bundle = assemble_covariance(data, theta, jitter=1e-8)
        q = data[-1].inputs[:2]
        without = predict(bundle, data, theta, q, include_noise=False)
        with_ = predict(bundle, data, theta, q, include_noise=True)
        np.testing.assert_allclose(
            with_.variance - without.variance,
            np.exp(2 * theta.log_sigmas[-1]),
            rtol=1e-9,
        )
        assert with_.includes_noise and not without.includes_noise

    def test_variance_never_negative(self, rng):
        data = random_dataset(rng, q=2, n=12, n_t=8, x_scale=0.5)
        theta = random_theta(rng, q=2)
        bundle = assemble_covariance(data, theta)
        pred = predict(bundle, data, theta, data[-1].inputs)
        assert np.all(pred.variance >= 0.0)

    def test_query_dimension_mismatch(self, small_problem):
        data, theta = small_problem
        bundle = assemble_covariance(data, theta)
        with pytest.raises(DataError):
            predict(bundle, data, theta, np.zeros((3, 2)))


class TestMarginalization:
    def test_empty_drop_is_identity(self, small_problem):
        data, theta = small_problem
        data2, theta2 = marginalize_sources(data, theta, set())
        assert len(data2) == len(data)
        np.testing.assert_array_equal(theta2.flatten(), theta.flatten())

    def test_drop_all_gives_single_output_model(self, small_problem):
        data, theta = small_problem
        data2, theta2 = marginalize_sources(data, theta, {0, 1, 2})
        assert len(data2) == 1
        assert theta2.q == 0
        bundle = assemble_covariance(data2, theta2, jitter=1e-8)
        pred = predict(bundle, data2, theta2, data[-1].inputs[:3])
        assert pred.mean.shape == (3,)

    def test_invalid_index_rejected(self, small_problem):
        data, theta = small_problem
        with pytest.raises(DataError):
            marginalize_sources(data, theta, {7})

    @pytest.mark.parametrize("full", [False, True])
    def test_zeroed_sources_are_exactly_removable(self, full, rng):
        data = random_dataset(rng, q=4, n=10, n_t=6)
        theta = random_theta(rng, q=4, full=full)
        drop = {1, 3}
        for i in drop:
            theta.transfer_kernels[i] = KernelParams(
                0.0, theta.transfer_kernels[i].log_lambda
            )
            if full:
                theta.shared_kernels[i] = KernelParams(
                    0.0, theta.shared_kernels[i].log_lambda
                )
        query = rng.uniform(0, 3, (50, 1))
        b_full = assemble_covariance(data, theta, jitter=1e-8)
        p_full = predict(b_full, data, theta, query)
        data2, theta2 = marginalize_sources(data, theta, drop)
        b_red = assemble_covariance(data2, theta2, jitter=1e-8)
        p_red = predict(b_red, data2, theta2, query)
        np.testing.assert_allclose(p_full.mean, p_red.mean, atol=1e-8)
        np.testing.assert_allclose(p_full.variance, p_red.variance, atol=1e-8)


def test_dense_from_blocks_roundtrip(rng):
    data = random_dataset(rng, q=2, n=4, n_t=3)
    theta = random_theta(rng, q=2)
    bundle = assemble_covariance(data, theta, jitter=1e-9, keep_dense=True)
    C = dense_from_blocks(
        bundle.source_blocks, bundle.cross_blocks, bundle.target_block
    )
    np.testing.assert_array_equal(C, bundle.dense_full)
    np.testing.assert_allclose(C, C.T, atol=0)
