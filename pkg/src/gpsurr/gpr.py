"""Exact Gaussian-process regression with marginal-likelihood fitting.

Training is the standard Cholesky route: factor K + sigma_n^2 I once per
hyperparameter evaluation, reuse the factor for the data fit term, the
log determinant and the gradient. Hyperparameters (including the noise
variance) are optimized in log space by gradient ascent with a
backtracking line search, restarted from random log-uniform draws.

All model state is kept in standardized units; predictions destandardize
on the way out. The reported variance is predictive (it includes the
fitted observation noise), matching bands drawn around noisy targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .dataset import FlatDataset, Standardizer, standardize_fit
from .errors import DataError, NumericalError
from .kernels import (
    KernelFamily,
    KernelSpec,
    kernel_cross_matrix,
    kernel_matrix,
    kernel_matrix_grads,
)

NOISE_VARIANCE_FLOOR = 1e-12
JITTER_START_FRACTION = 1e-10
JITTER_MAX_FRACTION = 1e-4

LOG2PI = math.log(2.0 * math.pi)


@dataclass
class OptimizerConfig:
    """Marginal-likelihood optimization settings."""

    max_iters: int = 200
    tolerance: float = 1e-5
    restarts: int = 3
    seed: int = 0


@dataclass(frozen=True)
class Prediction:
    """Posterior mean and predictive variance in natural target units."""

    mean: float
    variance: float


@dataclass(frozen=True)
class ProfileWithCI:
    """A swept prediction curve with a z-sigma confidence band.

    ``variances`` (and the band) are None for mean-only models.
    """

    sweep_values: np.ndarray
    means: np.ndarray
    variances: np.ndarray | None
    ci_lower: np.ndarray | None
    ci_upper: np.ndarray | None
    z: float

    def __post_init__(self):
        object.__setattr__(self, "sweep_values", np.asarray(self.sweep_values, dtype=float))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        for name in ("variances", "ci_lower", "ci_upper"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float))
        m = self.sweep_values.shape[0]
        vectors = [self.means, self.variances, self.ci_lower, self.ci_upper]
        if any(v is not None and v.shape != (m,) for v in vectors):
            raise DataError("profile vectors must all share the sweep length")
        if self.variances is not None:
            if np.any(self.ci_lower > self.means) or np.any(self.ci_upper < self.means):
                raise DataError("confidence band must bracket the mean")


@dataclass
class GprModel:
    """Trained GP state; immutable once fitted (by convention)."""

    kernel: KernelSpec
    noise_variance: float
    train_inputs: np.ndarray
    train_targets: np.ndarray
    chol_factor: np.ndarray
    dual_coeffs: np.ndarray
    standardizer: Standardizer
    feature_names: tuple[str, ...]
    target_name: str
    prior_mean_const: float = 0.0

    def __post_init__(self):
        self.feature_names = tuple(self.feature_names)
        if self.noise_variance <= 0:
            raise DataError("noise_variance must be positive")
        if np.any(np.diag(self.chol_factor) <= 0):
            raise DataError("Cholesky factor must have a strictly positive diagonal")

    @property
    def n(self) -> int:
        return self.train_inputs.shape[0]

    @property
    def d(self) -> int:
        return self.train_inputs.shape[1]


def _factorize(K: np.ndarray, noise_variance: float) -> tuple[np.ndarray, float]:
    """Cholesky of K + noise*I with escalating jitter on failure."""
    n = K.shape[0]
    A = K + noise_variance * np.eye(n)
    try:
        return cholesky(A, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    mean_diag = float(np.mean(np.diag(K)))
    jitter = JITTER_START_FRACTION * mean_diag
    limit = JITTER_MAX_FRACTION * mean_diag
    while jitter <= limit * (1 + 1e-12):
        try:
            return cholesky(A + jitter * np.eye(n), lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"Cholesky factorization failed with jitter up to {limit:.3e}",
        attempted_jitter=limit,
    )


def _lml_value(
    kernel: KernelSpec, noise_variance: float, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Log evidence plus the factorization it was computed from."""
    n = X.shape[0]
    K = kernel_matrix(kernel, X)
    L, _ = _factorize(K, noise_variance)
    alpha = cho_solve((L, True), y)
    lml = float(-0.5 * (y @ alpha) - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG2PI)
    return lml, L, alpha


def _lml_grad(
    kernel: KernelSpec,
    noise_variance: float,
    X: np.ndarray,
    L: np.ndarray,
    alpha: np.ndarray,
) -> np.ndarray:
    A_inv = cho_solve((L, True), np.eye(X.shape[0]))
    M = np.outer(alpha, alpha) - A_inv
    grads = [0.5 * float(np.sum(M * G)) for G in kernel_matrix_grads(kernel, X)]
    grads.append(noise_variance * float(np.trace(M)))
    return np.array(grads)


def log_marginal_likelihood(
    kernel: KernelSpec, noise_variance: float, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Log evidence of y and its gradient in log-hyperparameter space.

    Gradient order is [log sigma_f, log length_scales..., log rq_alpha
    (rq only), log sigma_n].
    """
    lml, L, alpha = _lml_value(kernel, noise_variance, X, y)
    return lml, _lml_grad(kernel, noise_variance, X, L, alpha)


LOG_PARAM_BOUND = 50.0  # |log h| beyond this is treated as divergence


def _pack(kernel: KernelSpec, noise_variance: float) -> np.ndarray:
    return np.append(kernel.log_params(), 0.5 * math.log(noise_variance))


def _unpack(p: np.ndarray, family: KernelFamily) -> tuple[KernelSpec, float]:
    if not np.all(np.isfinite(p)) or np.max(np.abs(p)) > LOG_PARAM_BOUND:
        raise NumericalError(f"log-hyperparameters out of range: {p}")
    kernel = KernelSpec.from_log_params(family, p[:-1])
    noise_variance = max(math.exp(2.0 * p[-1]), NOISE_VARIANCE_FLOOR)
    return kernel, noise_variance


def _state_text(p: np.ndarray, family: KernelFamily) -> str:
    kernel, noise = _unpack(p, family)
    return f"kernel={kernel.to_json()}, noise_variance={noise:.6e}"


def _maximize_lml(
    X: np.ndarray, y: np.ndarray, p0: np.ndarray, family: KernelFamily, config: OptimizerConfig
) -> tuple[np.ndarray, float]:
    """Gradient ascent with backtracking line search on the packed log params."""
    log_sn_floor = 0.5 * math.log(NOISE_VARIANCE_FLOOR)

    def project(p):
        p = p.copy()
        p[-1] = max(p[-1], log_sn_floor)
        return p

    def value(p):
        """Objective only; line-search probes skip the gradient."""
        try:
            kernel, noise = _unpack(p, family)
            return _lml_value(kernel, noise, X, y)
        except (NumericalError, ValueError):
            return -np.inf, None, None

    def grad(p, L, alpha):
        kernel, noise = _unpack(p, family)
        return _lml_grad(kernel, noise, X, L, alpha)

    p = project(p0)
    f, L, alpha = value(p)
    if not np.isfinite(f):
        raise NumericalError(
            f"log marginal likelihood is non-finite at {_state_text(p, family)}",
            state=_state_text(p, family),
        )
    g = grad(p, L, alpha)
    if not np.all(np.isfinite(g)):
        raise NumericalError(
            f"log marginal likelihood gradient is non-finite at {_state_text(p, family)}",
            state=_state_text(p, family),
        )
    step = 1.0
    for _ in range(config.max_iters):
        if np.max(np.abs(g)) < config.tolerance:
            break
        gg = float(g @ g)
        t = step
        accepted = False
        for _ in range(40):
            p_new = project(p + t * g)
            f_new, L_new, alpha_new = value(p_new)
            if np.isfinite(f_new) and f_new >= f + 1e-4 * t * gg:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        p, f = p_new, f_new
        g = grad(p, L_new, alpha_new)
        step = min(t * 2.0, 100.0)
    return p, f


def fit(
    data: FlatDataset,
    init: KernelSpec,
    init_noise: float,
    config: OptimizerConfig | None = None,
) -> GprModel:
    """Fit hyperparameters by maximizing the marginal likelihood.

    The provided init is always one starting point; ``config.restarts``
    extra starts are drawn log-uniformly (sigma_f, length scales in
    [0.1, 10], noise variance in [1e-6, 1e-1], standardized units). The
    highest-likelihood optimum wins. With max_iters=0 the init is used
    verbatim and no restarts are drawn.
    """
    config = config or OptimizerConfig()
    if data.n == 0:
        raise DataError("cannot fit on an empty dataset")
    if init.n_features != data.d:
        raise DataError(
            f"init kernel has {init.n_features} length scales for {data.d} features"
        )
    if not init_noise > 0:
        raise DataError(f"init_noise must be positive, got {init_noise}")

    scaler = standardize_fit(data) if data.n >= 2 else Standardizer(
        np.zeros(data.d), np.ones(data.d), 0.0, 1.0
    )
    Xs = scaler.apply_inputs(data.inputs)
    ys = scaler.apply_targets(data.targets)

    if config.max_iters == 0:
        kernel, noise_variance = init, float(init_noise)
    else:
        starts = [_pack(init, init_noise)]
        rng = np.random.default_rng(config.seed)
        for _ in range(config.restarts):
            parts = [rng.uniform(math.log(0.1), math.log(10.0))]  # log sigma_f
            parts.extend(rng.uniform(math.log(0.1), math.log(10.0), size=data.d))
            if init.family is KernelFamily.RATIONAL_QUADRATIC:
                parts.append(rng.uniform(math.log(0.1), math.log(10.0)))
            parts.append(0.5 * rng.uniform(math.log(1e-6), math.log(1e-1)))
            starts.append(np.array(parts))

        best_p, best_f = None, -np.inf
        for i, p0 in enumerate(starts):
            try:
                p_opt, f_opt = _maximize_lml(Xs, ys, p0, init.family, config)
            except NumericalError:
                if i == 0:
                    raise  # the caller-provided init must be evaluable
                continue
            if best_p is None or f_opt > best_f:
                best_p, best_f = p_opt, f_opt
        kernel, noise_variance = _unpack(best_p, init.family)
    K = kernel_matrix(kernel, Xs)
    L, _ = _factorize(K, noise_variance)
    dual = cho_solve((L, True), ys)
    return GprModel(
        kernel=kernel,
        noise_variance=noise_variance,
        train_inputs=Xs,
        train_targets=ys,
        chol_factor=L,
        dual_coeffs=dual,
        standardizer=scaler,
        feature_names=data.feature_names,
        target_name=data.target_name,
    )


def _predict_standardized(model: GprModel, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched posterior mean/variance in standardized units (chunked in m)."""
    m = Xs.shape[0]
    means = np.empty(m)
    latent = np.empty(m)
    prior = model.kernel.sigma_f**2
    chunk = 2048
    for start in range(0, m, chunk):
        block = Xs[start : start + chunk]
        K_cross = kernel_cross_matrix(model.kernel, model.train_inputs, block)
        means[start : start + chunk] = K_cross.T @ model.dual_coeffs + model.prior_mean_const
        V = solve_triangular(model.chol_factor, K_cross, lower=True)
        latent[start : start + chunk] = np.maximum(prior - np.sum(V * V, axis=0), 0.0)
    return means, latent + model.noise_variance


def predict_batch(model: GprModel, X_natural) -> tuple[np.ndarray, np.ndarray]:
    """Means and predictive variances (natural units) for rows of X_natural."""
    X = np.asarray(X_natural, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise DataError(
            f"expected an m x {model.d} matrix of inputs, got shape {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise DataError("prediction inputs contain non-finite values")
    means_s, vars_s = _predict_standardized(model, model.standardizer.apply_inputs(X))
    s = model.standardizer
    return s.invert_targets(means_s), vars_s * s.target_scale**2


def predict(model: GprModel, xstar) -> Prediction:
    """Posterior prediction for one input point in natural units."""
    x = np.asarray(xstar, dtype=float).ravel()
    if x.shape[0] != model.d:
        raise DataError(f"expected {model.d} features, got {x.shape[0]}")
    means, variances = predict_batch(model, x[None, :])
    return Prediction(mean=float(means[0]), variance=float(variances[0]))


def _profile_inputs(
    feature_names: tuple[str, ...], fixed: dict, sweep_feature: str, sweep_grid
) -> np.ndarray:
    if sweep_feature not in feature_names:
        raise DataError(
            f"unknown sweep feature {sweep_feature!r}; model features are "
            f"{list(feature_names)}"
        )
    grid = np.asarray(sweep_grid, dtype=float).ravel()
    if grid.size == 0:
        raise DataError("sweep grid must not be empty")
    if not np.all(np.isfinite(grid)):
        raise DataError("sweep grid contains non-finite values")
    unknown = sorted(set(fixed) - set(feature_names))
    if unknown:
        raise DataError(
            f"unknown fixed features {unknown}; model features are {list(feature_names)}"
        )
    missing = [n for n in feature_names if n != sweep_feature and n not in fixed]
    if missing:
        raise DataError(f"missing fixed features: {missing}")
    for name, value in fixed.items():
        if name != sweep_feature and not math.isfinite(float(value)):
            raise DataError(f"fixed feature {name!r} has non-finite value {value!r}")
    X = np.empty((grid.size, len(feature_names)))
    for j, name in enumerate(feature_names):
        X[:, j] = grid if name == sweep_feature else float(fixed[name])
    return X


def predict_profile(
    model: GprModel, fixed: dict, sweep_feature: str, sweep_grid, z: float = 2.0
) -> ProfileWithCI:
    """Sweep one feature over a grid with the rest held fixed.

    ``fixed`` may be a CellDesign-style mapping; it must cover every model
    feature except the swept one. The band is mean +/- z * sqrt(variance).
    """
    if hasattr(fixed, "as_dict"):
        fixed = fixed.as_dict()
    if not math.isfinite(z) or z < 0:
        raise DataError(f"z must be a finite non-negative real, got {z}")
    grid = np.asarray(sweep_grid, dtype=float).ravel()
    X = _profile_inputs(model.feature_names, fixed, sweep_feature, grid)
    means, variances = predict_batch(model, X)
    half = z * np.sqrt(variances)
    return ProfileWithCI(
        sweep_values=grid,
        means=means,
        variances=variances,
        ci_lower=means - half,
        ci_upper=means + half,
        z=z,
    )
