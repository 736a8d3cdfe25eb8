import math

import numpy as np
import pytest

from gpsurr.errors import DataError
from gpsurr.kernels import (
    KernelFamily,
    KernelSpec,
    kernel_cross,
    kernel_eval,
    kernel_matrix,
    kernel_matrix_grads,
)

SE = KernelFamily.SQUARED_EXPONENTIAL
RQ = KernelFamily.RATIONAL_QUADRATIC


def se_spec(sigma_f=1.0, ls=(1.0,)):
    return KernelSpec(SE, sigma_f, tuple(ls))

def rq_spec(sigma_f=1.0, ls=(1.0,), alpha=1.0):
    return KernelSpec(RQ, sigma_f, tuple(ls), alpha)

def random_spec(rng, family, d):
    sigma_f = rng.uniform(0.5, 2.0)
    ls = rng.uniform(0.5, 2.0, size=d)
    if family is RQ:
        return KernelSpec(RQ, sigma_f, tuple(ls), rng.uniform(0.5, 3.0))
    return KernelSpec(SE, sigma_f, tuple(ls))


class TestSpecValidation:
    def test_rejects_nonpositive_sigma_f(self):
        with pytest.raises(DataError):
            se_spec(sigma_f=0.0)

    def test_rejects_nonpositive_length_scale(self):
        with pytest.raises(DataError):
            se_spec(ls=(1.0, -2.0))

    def test_rq_requires_alpha(self):
        with pytest.raises(DataError):
            KernelSpec(RQ, 1.0, (1.0,))

    def test_se_forbids_alpha(self):
        with pytest.raises(DataError):
            KernelSpec(SE, 1.0, (1.0,), 2.0)

    def test_json_round_trip(self):
        for spec in (se_spec(2.0, (0.5, 3.0)), rq_spec(1.5, (2.0,), 0.7)):
            assert KernelSpec.from_json(spec.to_json()) == spec

    def test_json_rejects_unknown_family(self):
        with pytest.raises(DataError):
            KernelSpec.from_json({"family": "matern", "sigma_f": 1, "length_scales": [1]})


class TestKernelEval:
    def test_se_same_point_is_sigma_f_squared(self):
        assert kernel_eval(se_spec(), [0.3], [0.3]) == 1.0
        assert kernel_eval(se_spec(sigma_f=2.5, ls=(0.2, 3.0)), [1, 2], [1, 2]) == 2.5**2

    def test_se_unit_distance(self):
        assert kernel_eval(se_spec(), [0.0], [1.0]) == pytest.approx(math.exp(-0.5), abs=1e-12)

    def test_rq_direct_formula(self):
        # sigma_f=2, theta=1, alpha=1, |x-x2|=1 -> 4 * (1 + 0.5)^-1
        val = kernel_eval(rq_spec(sigma_f=2.0), [0.0], [1.0])
        assert val == pytest.approx(4.0 / 1.5, abs=1e-12)

    def test_dimension_mismatch_names_lengths(self):
        with pytest.raises(DataError, match="2.*3|3.*2"):
            kernel_eval(se_spec(ls=(1.0, 1.0)), [0, 0], [0, 0, 0])

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for family in (SE, RQ):
            spec = random_spec(rng, family, 3)
            for _ in range(20):
                x, y = rng.normal(size=3), rng.normal(size=3)
                assert kernel_eval(spec, x, y) == kernel_eval(spec, y, x)

    def test_value_bounded_by_sigma_f_squared(self):
        rng = np.random.default_rng(1)
        for family in (SE, RQ):
            spec = random_spec(rng, family, 2)
            for _ in range(50):
                x, y = rng.normal(size=2), rng.normal(size=2)
                v = kernel_eval(spec, x, y)
                assert 0.0 < v <= spec.sigma_f**2

    def test_se_monotone_decay_in_distance(self):
        spec = se_spec(sigma_f=1.3, ls=(0.7,))
        dists = np.linspace(0.0, 5.0, 40)
        vals = [kernel_eval(spec, [0.0], [d]) for d in dists]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestKernelMatrix:
    def test_single_row(self):
        K = kernel_matrix(se_spec(sigma_f=1.7), [[0.4]])
        assert K.shape == (1, 1) and K[0, 0] == 1.7**2

    def test_identical_rows(self):
        K = kernel_matrix(rq_spec(sigma_f=2.0, ls=(1.0, 1.0), alpha=0.5), [[1, 2], [1, 2]])
        assert np.all(K == 4.0)

    def test_matches_pairwise_eval_loop(self):
        # brute-force oracle: entry-by-entry kernel_eval
        rng = np.random.default_rng(42)
        X = rng.normal(size=(5, 3))
        for family in (SE, RQ):
            spec = random_spec(rng, family, 3)
            K = kernel_matrix(spec, X)
            expected = np.array(
                [[kernel_eval(spec, X[i], X[j]) for j in range(5)] for i in range(5)]
            )
            assert np.max(np.abs(K - expected)) < 1e-12

    def test_exactly_symmetric_with_unit_diagonal(self):
        rng = np.random.default_rng(3)
        for family in (SE, RQ):
            spec = random_spec(rng, family, 4)
            X = rng.normal(size=(12, 4))
            K = kernel_matrix(spec, X)
            assert np.array_equal(K, K.T)
            assert np.allclose(np.diag(K), spec.sigma_f**2, rtol=0, atol=0)

    def test_numerically_psd(self):
        rng = np.random.default_rng(4)
        for family in (SE, RQ):
            for _ in range(5):
                n, d = int(rng.integers(2, 21)), int(rng.integers(1, 5))
                spec = random_spec(rng, family, d)
                X = rng.normal(size=(n, d))
                w = np.linalg.eigvalsh(kernel_matrix(spec, X))
                assert w.min() >= -1e-10 * n * spec.sigma_f**2


class TestKernelCross:
    def test_training_point_hits_sigma_f_squared(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(6, 2))
        spec = se_spec(sigma_f=1.4, ls=(1.0, 2.0))
        k = kernel_cross(spec, X, X[3])
        assert k[3] == 1.4**2

    def test_far_query_decays_below_1e8(self):
        spec = se_spec(sigma_f=2.0, ls=(0.5, 0.5))
        X = np.zeros((4, 2))
        k = kernel_cross(spec, X, [50.0, 50.0])
        assert np.all(k < 1e-8 * spec.sigma_f**2)

    def test_matches_eval_loop(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(7, 3))
        xstar = rng.normal(size=3)
        for family in (SE, RQ):
            spec = random_spec(rng, family, 3)
            k = kernel_cross(spec, X, xstar)
            expected = np.array([kernel_eval(spec, xstar, X[j]) for j in range(7)])
            assert np.max(np.abs(k - expected)) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            kernel_cross(se_spec(ls=(1.0, 1.0)), np.zeros((3, 2)), [0.0])


def finite_diff_grads(spec, X, step=1e-5):
    """Central finite differences of the kernel matrix in log-parameter space."""
    p0 = spec.log_params()
    grads = []
    for i in range(len(p0)):
        p_hi, p_lo = p0.copy(), p0.copy()
        p_hi[i] += step
        p_lo[i] -= step
        K_hi = kernel_matrix(KernelSpec.from_log_params(spec.family, p_hi), X)
        K_lo = kernel_matrix(KernelSpec.from_log_params(spec.family, p_lo), X)
        grads.append((K_hi - K_lo) / (2 * step))
    return grads


class TestKernelGrads:
    def test_sigma_f_grad_is_twice_kernel(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(5, 2))
        for spec in (se_spec(1.3, (0.8, 1.2)), rq_spec(0.9, (1.1, 0.6), 2.0)):
            K = kernel_matrix(spec, X)
            g = kernel_matrix_grads(spec, X)
            assert np.array_equal(g[0], 2.0 * K)

    def test_length_scale_grad_diagonal_is_zero(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(6, 2))
        for spec in (se_spec(1.0, (0.8, 1.2)), rq_spec(1.0, (1.1, 0.6), 1.5)):
            for g in kernel_matrix_grads(spec, X)[1:]:
                assert np.all(np.diag(g) == 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(6, 2))
        for spec in (se_spec(1.4, (0.7, 1.3)), rq_spec(0.8, (1.2, 0.9), 1.7)):
            analytic = kernel_matrix_grads(spec, X)
            numeric = finite_diff_grads(spec, X)
            assert len(analytic) == len(spec.hyperparameter_names)
            for a, f in zip(analytic, numeric):
                rel = np.max(np.abs(a - f)) / max(np.max(np.abs(f)), 1e-12)
                assert rel < 1e-5

    def test_grad_count_per_family(self):
        X = np.zeros((2, 3))
        assert len(kernel_matrix_grads(se_spec(1, (1, 1, 1)), X)) == 4
        assert len(kernel_matrix_grads(rq_spec(1, (1, 1, 1), 1.0), X)) == 5


class TestFamilyLimits:
    def test_rq_approaches_se_for_large_alpha(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(8, 3))
        sigma_f, ls = 1.6, (0.9, 1.4, 0.6)
        K_se = kernel_matrix(se_spec(sigma_f, ls), X)
        K_rq = kernel_matrix(rq_spec(sigma_f, ls, alpha=1e6), X)
        assert np.max(np.abs(K_rq - K_se)) < 1e-4 * sigma_f**2
