"""Positive-definite covariance kernels and their log-space gradients.

Two stationary families are supported, both with one length scale per
input feature (automatic-relevance style):

    squared exponential   k(x, x') = sigma_f^2 * exp(-r2 / 2)
    rational quadratic    k(x, x') = sigma_f^2 * (1 + r2 / (2 alpha))^(-alpha)

where r2 = sum_k ((x_k - x'_k) / theta_k)^2.

Hyperparameter gradients are taken with respect to log-parameters so the
optimizer can work unconstrained while positivity is preserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DataError


class KernelFamily(str, Enum):
    SQUARED_EXPONENTIAL = "se"
    RATIONAL_QUADRATIC = "rq"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters.

    ``length_scales`` holds one positive scale per input feature;
    ``rq_alpha`` is the rational-quadratic shape parameter and must be
    present exactly when the family is rational quadratic.
    """

    family: KernelFamily
    sigma_f: float
    length_scales: tuple[float, ...]
    rq_alpha: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        object.__setattr__(self, "sigma_f", float(self.sigma_f))
        object.__setattr__(
            self, "length_scales", tuple(float(v) for v in self.length_scales)
        )
        if self.rq_alpha is not None:
            object.__setattr__(self, "rq_alpha", float(self.rq_alpha))
        if not self.sigma_f > 0:
            raise DataError(f"sigma_f must be positive, got {self.sigma_f}")
        if len(self.length_scales) == 0:
            raise DataError("length_scales must not be empty")
        if any(not v > 0 for v in self.length_scales):
            raise DataError(f"length_scales must be positive, got {self.length_scales}")
        if self.family is KernelFamily.RATIONAL_QUADRATIC:
            if self.rq_alpha is None or not self.rq_alpha > 0:
                raise DataError(
                    f"rq_alpha must be a positive real for the rq family, got {self.rq_alpha}"
                )
        elif self.rq_alpha is not None:
            raise DataError("rq_alpha is only valid for the rational quadratic family")

    @property
    def n_features(self) -> int:
        return len(self.length_scales)

    @property
    def hyperparameter_names(self) -> tuple[str, ...]:
        names = ["sigma_f"] + [f"length_scale_{k}" for k in range(self.n_features)]
        if self.family is KernelFamily.RATIONAL_QUADRATIC:
            names.append("rq_alpha")
        return tuple(names)

    def log_params(self) -> np.ndarray:
        """Hyperparameters as a log-space vector [sigma_f, scales..., alpha?]."""
        vals = [self.sigma_f, *self.length_scales]
        if self.family is KernelFamily.RATIONAL_QUADRATIC:
            vals.append(self.rq_alpha)
        return np.log(np.asarray(vals, dtype=float))

    @classmethod
    def from_log_params(cls, family: KernelFamily, p: np.ndarray) -> "KernelSpec":
        family = KernelFamily(family)
        p = np.asarray(p, dtype=float)
        if family is KernelFamily.RATIONAL_QUADRATIC:
            return cls(family, math.exp(p[0]), tuple(np.exp(p[1:-1])), math.exp(p[-1]))
        return cls(family, math.exp(p[0]), tuple(np.exp(p[1:])))

    def to_json(self) -> dict:
        out = {
            "family": self.family.value,
            "sigma_f": self.sigma_f,
            "length_scales": list(self.length_scales),
        }
        if self.rq_alpha is not None:
            out["rq_alpha"] = self.rq_alpha
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "KernelSpec":
        try:
            return cls(
                family=KernelFamily(obj["family"]),
                sigma_f=obj["sigma_f"],
                length_scales=tuple(obj["length_scales"]),
                rq_alpha=obj.get("rq_alpha"),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"invalid kernel JSON: {exc}") from exc


def _check_dim(spec: KernelSpec, d: int, what: str):
    if d != spec.n_features:
        raise DataError(
            f"{what} has {d} features but the kernel has {spec.n_features} length scales"
        )


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError(f"expected a 2-D feature matrix, got shape {X.shape}")
    return X


def _scaled_sq_dists(X: np.ndarray, ls: tuple[float, ...]) -> np.ndarray:
    """Pairwise squared distances after per-feature scaling.

    Accumulating per feature keeps the result bitwise symmetric:
    (a-b)^2 and (b-a)^2 are identical in floating point.
    """
    n = X.shape[0]
    r2 = np.zeros((n, n))
    for k, lk in enumerate(ls):
        dk = (X[:, k, None] - X[None, :, k]) / lk
        r2 += dk * dk
    return r2


def _apply_family(spec: KernelSpec, r2: np.ndarray | float):
    sf2 = spec.sigma_f**2
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        return sf2 * np.exp(-0.5 * r2)
    # log1p form stays accurate for r2 << alpha (the SE limit)
    return sf2 * np.exp(-spec.rq_alpha * np.log1p(r2 / (2.0 * spec.rq_alpha)))


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    """Evaluate k(x, x2) for two single feature vectors."""
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape[0] != x2.shape[0]:
        raise DataError(
            f"feature vectors have mismatched lengths {x.shape[0]} and {x2.shape[0]}"
        )
    _check_dim(spec, x.shape[0], "input vector")
    ls = np.asarray(spec.length_scales)
    r2 = float(np.sum(((x - x2) / ls) ** 2))
    return float(_apply_family(spec, r2))


def kernel_matrix(spec: KernelSpec, X) -> np.ndarray:
    """Full kernel matrix over the rows of X (exactly symmetric)."""
    X = _as_matrix(X)
    _check_dim(spec, X.shape[1], "feature matrix")
    return _apply_family(spec, _scaled_sq_dists(X, spec.length_scales))


def kernel_cross(spec: KernelSpec, X, xstar) -> np.ndarray:
    """Vector of k(xstar, X_j) over the rows of X."""
    X = _as_matrix(X)
    xstar = np.asarray(xstar, dtype=float).ravel()
    if X.shape[1] != xstar.shape[0]:
        raise DataError(
            f"feature vectors have mismatched lengths {X.shape[1]} and {xstar.shape[0]}"
        )
    _check_dim(spec, xstar.shape[0], "query vector")
    ls = np.asarray(spec.length_scales)
    r2 = np.sum(((X - xstar[None, :]) / ls) ** 2, axis=1)
    return _apply_family(spec, r2)


def kernel_cross_matrix(spec: KernelSpec, X, X2) -> np.ndarray:
    """Rectangular kernel matrix k(X_i, X2_j) (n x m)."""
    X = _as_matrix(X)
    X2 = _as_matrix(X2)
    if X.shape[1] != X2.shape[1]:
        raise DataError(
            f"feature matrices have mismatched widths {X.shape[1]} and {X2.shape[1]}"
        )
    _check_dim(spec, X.shape[1], "feature matrix")
    r2 = np.zeros((X.shape[0], X2.shape[0]))
    for k, lk in enumerate(spec.length_scales):
        dk = (X[:, k, None] - X2[None, :, k]) / lk
        r2 += dk * dk
    return _apply_family(spec, r2)


def kernel_matrix_grads(spec: KernelSpec, X) -> list[np.ndarray]:
    """Gradient matrices dK/dlog(h), one per hyperparameter.

    Order matches ``spec.hyperparameter_names``:
    [sigma_f, length_scales..., rq_alpha (rq only)].
    """
    X = _as_matrix(X)
    _check_dim(spec, X.shape[1], "feature matrix")
    ls = spec.length_scales
    r2 = _scaled_sq_dists(X, ls)
    K = _apply_family(spec, r2)
    grads = [2.0 * K]
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        for k, lk in enumerate(ls):
            wk = ((X[:, k, None] - X[None, :, k]) / lk) ** 2
            grads.append(K * wk)
    else:
        a = spec.rq_alpha
        u = 1.0 + r2 / (2.0 * a)
        for k, lk in enumerate(ls):
            wk = ((X[:, k, None] - X[None, :, k]) / lk) ** 2
            grads.append(K * wk / u)
        grads.append(K * (r2 / (2.0 * u) - a * np.log1p(r2 / (2.0 * a))))
    return grads
