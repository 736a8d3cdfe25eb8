import math

import numpy as np
import pytest

from gpsurr.dataset import FlatDataset, Standardizer
from gpsurr.errors import DataError, NumericalError
from gpsurr.gpr import (
    GprModel,
    OptimizerConfig,
    _factorize,
    fit,
    log_marginal_likelihood,
    predict,
    predict_batch,
    predict_profile,
)
from gpsurr.kernels import KernelFamily, KernelSpec, kernel_cross, kernel_eval, kernel_matrix

SE = KernelFamily.SQUARED_EXPONENTIAL
RQ = KernelFamily.RATIONAL_QUADRATIC


def random_problem(rng, n, d, family=SE):
    X = rng.normal(size=(n, d))
    y = rng.normal(size=n)
    sigma_f = rng.uniform(0.5, 2.0)
    ls = tuple(rng.uniform(0.5, 2.0, size=d))
    spec = (
        KernelSpec(RQ, sigma_f, ls, rng.uniform(0.5, 3.0))
        if family is RQ
        else KernelSpec(SE, sigma_f, ls)
    )
    noise = rng.uniform(0.01, 0.1)
    return spec, noise, X, y


def identity_scaler(d):
    return Standardizer(np.zeros(d), np.ones(d), 0.0, 1.0)


def build_model(spec, noise, X, y, feature_names=None):
    """Assemble a GprModel directly in standardized space (identity scaler)."""
    K = kernel_matrix(spec, X)
    L, _ = _factorize(K, noise)
    from scipy.linalg import cho_solve

    dual = cho_solve((L, True), y)
    names = feature_names or tuple(f"f{k}" for k in range(X.shape[1]))
    return GprModel(
        kernel=spec,
        noise_variance=noise,
        train_inputs=X,
        train_targets=y,
        chol_factor=L,
        dual_coeffs=dual,
        standardizer=identity_scaler(X.shape[1]),
        feature_names=names,
        target_name="y",
    )


def dense_lml(spec, noise, X, y):
    """Independent oracle: direct inversion / determinant evaluation."""
    A = kernel_matrix(spec, X) + noise * np.eye(X.shape[0])
    sign, logdet = np.linalg.slogdet(A)
    assert sign > 0
    return float(
        -0.5 * y @ np.linalg.solve(A, y) - 0.5 * logdet - 0.5 * len(y) * math.log(2 * math.pi)
    )


def dense_predict(spec, noise, X, y, xstar):
    """Independent oracle: posterior mean/variance via dense inverse."""
    A_inv = np.linalg.inv(kernel_matrix(spec, X) + noise * np.eye(X.shape[0]))
    k = kernel_cross(spec, X, xstar)
    mean = float(k @ A_inv @ y)
    var = float(kernel_eval(spec, xstar, xstar) - k @ A_inv @ k)
    return mean, var + noise


def lml_finite_diff(spec, noise, X, y, step=1e-5):
    from gpsurr.gpr import _pack, _unpack

    p0 = _pack(spec, noise)
    fd = np.empty_like(p0)
    for i in range(len(p0)):
        hi, lo = p0.copy(), p0.copy()
        hi[i] += step
        lo[i] -= step
        f_hi, _ = log_marginal_likelihood(*_unpack(hi, spec.family), X, y)
        f_lo, _ = log_marginal_likelihood(*_unpack(lo, spec.family), X, y)
        fd[i] = (f_hi - f_lo) / (2 * step)
    return fd


class TestLogMarginalLikelihood:
    def test_single_zero_target(self):
        # quadratic term vanishes: lml = -log L11 - 0.5 log 2pi
        spec = KernelSpec(SE, 1.5, (1.0,))
        X, y = np.array([[0.3]]), np.array([0.0])
        lml, _ = log_marginal_likelihood(spec, 0.01, X, y)
        L11 = math.sqrt(1.5**2 + 0.01)
        assert lml == pytest.approx(-math.log(L11) - 0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_matches_dense_inverse_oracle(self):
        rng = np.random.default_rng(20)
        for family in (SE, RQ):
            spec, noise, X, y = random_problem(rng, 30, 3, family)
            lml, _ = log_marginal_likelihood(spec, noise, X, y)
            assert lml == pytest.approx(dense_lml(spec, noise, X, y), abs=1e-8)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        for family in (SE, RQ):
            spec, noise, X, y = random_problem(rng, 20, 3, family)
            _, grad = log_marginal_likelihood(spec, noise, X, y)
            fd = lml_finite_diff(spec, noise, X, y)
            rel = np.max(np.abs(grad - fd)) / max(np.max(np.abs(fd)), 1e-8)
            assert rel < 1e-4

    def test_jitter_recovers_singular_system(self):
        # duplicated rows with tiny noise force PSD-boundary factorizations
        X = np.zeros((6, 2))
        y = np.zeros(6)
        spec = KernelSpec(SE, 1.0, (1.0, 1.0))
        lml, grad = log_marginal_likelihood(spec, 1e-12, X, y)
        assert np.isfinite(lml) and np.all(np.isfinite(grad))


class TestFactorize:
    def test_jitter_failure_carries_attempt(self):
        K = -np.eye(3)  # not a kernel matrix; cannot be rescued
        with pytest.raises(NumericalError) as info:
            _factorize(K, 1e-12)
        assert info.value.attempted_jitter is not None

    def test_clean_matrix_gets_no_jitter(self):
        rng = np.random.default_rng(22)
        spec, noise, X, _ = random_problem(rng, 10, 2)
        _, jitter = _factorize(kernel_matrix(spec, X), noise)
        assert jitter == 0.0


class TestPredict:
    def test_matches_dense_inverse_oracle(self):
        rng = np.random.default_rng(23)
        for family in (SE, RQ):
            spec, noise, X, y = random_problem(rng, 40, 3, family)
            model = build_model(spec, noise, X, y)
            for _ in range(5):
                xstar = rng.normal(size=3)
                got = predict(model, xstar)
                mean, var = dense_predict(spec, noise, X, y, xstar)
                assert got.mean == pytest.approx(mean, abs=1e-8)
                assert got.variance == pytest.approx(var, abs=1e-8)

    def test_interpolates_training_point_with_tiny_noise(self):
        rng = np.random.default_rng(24)
        X = rng.uniform(-2, 2, size=(12, 2))
        y = np.sin(X[:, 0]) + X[:, 1]
        model = build_model(KernelSpec(SE, 1.0, (1.0, 1.0)), 1e-12, X, y)
        got = predict(model, X[4])
        assert abs(got.mean - y[4]) < 1e-6
        assert got.variance < 1e-8

    def test_far_point_reverts_to_prior(self):
        rng = np.random.default_rng(25)
        X = rng.normal(size=(15, 2))
        y = rng.normal(size=15)
        spec = KernelSpec(SE, 1.3, (0.5, 0.5))
        model = build_model(spec, 0.04, X, y)
        got = predict(model, np.array([60.0, -60.0]))
        assert abs(got.mean - 0.0) < 1e-6
        assert got.variance == pytest.approx(1.3**2 + 0.04, abs=1e-6)

    def test_variance_never_exceeds_prior(self):
        rng = np.random.default_rng(26)
        for family in (SE, RQ):
            spec, noise, X, y = random_problem(rng, 25, 2, family)
            model = build_model(spec, noise, X, y)
            Xq = rng.normal(size=(200, 2)) * 3
            _, variances = predict_batch(model, Xq)
            assert np.all(variances <= spec.sigma_f**2 + noise + 1e-10)

    def test_adding_a_training_point_never_increases_variance(self):
        rng = np.random.default_rng(27)
        for trial in range(4):
            spec, noise, X, y = random_problem(rng, 12, 2)
            x_new = rng.normal(size=2)
            y_new = rng.normal()
            small = build_model(spec, noise, X, y)
            big = build_model(spec, noise, np.vstack([X, x_new]), np.append(y, y_new))
            Xq = rng.normal(size=(50, 2)) * 2
            _, v_small = predict_batch(small, Xq)
            _, v_big = predict_batch(big, Xq)
            assert np.all(v_big <= v_small + 1e-8)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(28)
        spec, noise, X, y = random_problem(rng, 8, 3)
        model = build_model(spec, noise, X, y)
        with pytest.raises(DataError):
            predict(model, [0.0, 0.0])

    def test_non_finite_input(self):
        rng = np.random.default_rng(29)
        spec, noise, X, y = random_problem(rng, 8, 2)
        model = build_model(spec, noise, X, y)
        with pytest.raises(DataError, match="non-finite"):
            predict(model, [0.0, float("nan")])


class TestFit:
    def test_max_iters_zero_uses_init_verbatim(self):
        rng = np.random.default_rng(30)
        data = FlatDataset(rng.normal(size=(20, 2)), rng.normal(size=20), ("a", "b"), "t")
        init = KernelSpec(SE, 1.7, (0.6, 2.2))
        model = fit(data, init, 0.05, OptimizerConfig(max_iters=0, restarts=3))
        assert model.kernel == init
        assert model.noise_variance == 0.05

    def test_cholesky_identity_reproduces_targets(self):
        rng = np.random.default_rng(31)
        data = FlatDataset(rng.normal(size=(25, 2)), rng.normal(size=25), ("a", "b"), "t")
        model = fit(data, KernelSpec(SE, 1.0, (1.0, 1.0)), 0.01, OptimizerConfig(max_iters=5))
        recon = model.chol_factor @ (model.chol_factor.T @ model.dual_coeffs)
        target = model.train_targets
        assert np.max(np.abs(recon - target)) < 1e-8 * max(1.0, np.max(np.abs(target)))

    def test_recovers_noise_free_sine(self):
        rng = np.random.default_rng(32)
        x = np.linspace(0, 2 * math.pi, 25)
        data = FlatDataset(x[:, None], np.sin(x), ("x",), "y")
        model = fit(
            data,
            KernelSpec(SE, 1.0, (1.0,)),
            1e-2,
            OptimizerConfig(max_iters=300, restarts=2, seed=0),
        )
        x_test = rng.uniform(0, 2 * math.pi, size=50)
        means, _ = predict_batch(model, x_test[:, None])
        assert np.max(np.abs(means - np.sin(x_test))) < 1e-3
        # standardized noise back to natural units: scale^2 factor
        assert model.noise_variance < 1e-4

    def test_white_noise_recovers_noise_level(self):
        rng = np.random.default_rng(33)
        X = rng.uniform(-3, 3, size=(50, 1))
        y = rng.normal(size=50)
        data = FlatDataset(X, y, ("x",), "y")
        model = fit(
            data,
            KernelSpec(SE, 1.0, (1.0,)),
            0.5,
            OptimizerConfig(max_iters=200, restarts=2, seed=1),
        )
        noise_natural = model.noise_variance * model.standardizer.target_scale**2
        assert 0.5 < noise_natural < 1.5
        x_grid = np.linspace(-3, 3, 40)[:, None]
        means, _ = predict_batch(model, x_grid)
        assert np.max(np.abs(means)) < 0.5

    def test_empty_data_rejected(self):
        data = FlatDataset(np.zeros((0, 2)), np.zeros(0), ("a", "b"), "t")
        with pytest.raises(DataError):
            fit(data, KernelSpec(SE, 1.0, (1.0, 1.0)), 0.1)

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(34)
        X = rng.normal(size=(30, 2))
        y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=30)
        data = FlatDataset(X, y, ("a", "b"), "t")
        cfg = OptimizerConfig(max_iters=40, restarts=2, seed=7)
        m1 = fit(data, KernelSpec(SE, 1.0, (1.0, 1.0)), 0.01, cfg)
        m2 = fit(data, KernelSpec(SE, 1.0, (1.0, 1.0)), 0.01, cfg)
        assert m1.kernel == m2.kernel
        assert m1.noise_variance == m2.noise_variance


class TestPredictProfile:
    def make_model(self):
        rng = np.random.default_rng(35)
        X = rng.uniform(0, 1, size=(30, 3))
        y = X[:, 0] + np.sin(3 * X[:, 2])
        return build_model(
            KernelSpec(SE, 1.0, (1.0, 1.0, 1.0)), 0.01, X, y, ("a", "b", "sweep")
        )

    def test_single_point_profile_equals_predict(self):
        model = self.make_model()
        profile = predict_profile(model, {"a": 0.5, "b": 0.2}, "sweep", [0.7])
        point = predict(model, [0.5, 0.2, 0.7])
        assert profile.means[0] == point.mean
        assert profile.variances[0] == point.variance

    def test_z_zero_collapses_band(self):
        model = self.make_model()
        profile = predict_profile(model, {"a": 0.5, "b": 0.2}, "sweep", np.linspace(0, 1, 9), z=0.0)
        assert np.array_equal(profile.ci_lower, profile.means)
        assert np.array_equal(profile.ci_upper, profile.means)

    def test_band_brackets_mean(self):
        model = self.make_model()
        profile = predict_profile(model, {"a": 0.1, "b": 0.9}, "sweep", np.linspace(0, 1, 20))
        assert np.all(profile.ci_lower <= profile.means)
        assert np.all(profile.ci_upper >= profile.means)

    def test_unknown_sweep_feature_lists_names(self):
        model = self.make_model()
        with pytest.raises(DataError, match="unknown sweep feature"):
            predict_profile(model, {"a": 0.1, "b": 0.9}, "nope", [0.5])

    def test_missing_fixed_feature_named(self):
        model = self.make_model()
        with pytest.raises(DataError, match="missing fixed features.*'b'"):
            predict_profile(model, {"a": 0.1}, "sweep", [0.5])

    def test_non_finite_grid_rejected(self):
        model = self.make_model()
        with pytest.raises(DataError, match="non-finite"):
            predict_profile(model, {"a": 0.1, "b": 0.9}, "sweep", [0.5, float("inf")])


class TestSparseRegionWidening:
    def test_gap_in_sweep_raises_uncertainty_inside(self):
        # delete a band of the 1-D input; posterior sigma inside must exceed outside
        rng = np.random.default_rng(36)
        x = np.concatenate([rng.uniform(0, 4, 80), rng.uniform(8, 12, 80)])
        y = np.sin(x) + 0.05 * rng.normal(size=x.size)
        data = FlatDataset(x[:, None], y, ("x",), "y")
        model = fit(data, KernelSpec(SE, 1.0, (1.0,)), 0.01,
                    OptimizerConfig(max_iters=100, restarts=1, seed=3))
        grid = np.linspace(0, 12, 121)
        _, variances = predict_batch(model, grid[:, None])
        sigma = np.sqrt(variances)
        inside = (grid > 4.5) & (grid < 7.5)
        assert sigma[inside].mean() > sigma[~inside].mean()
