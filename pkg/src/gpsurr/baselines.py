"""Mean-only baselines: random-forest regression and a small MLP.

Both predict point values only; no covariance is computed anywhere in
this module. That asymmetry against the GP is intentional and is what
the comparison harness asserts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import FlatDataset, Standardizer, standardize_fit
from .errors import DataError, NumericalError

# ---------------------------------------------------------------------------
# random forest
# ---------------------------------------------------------------------------


@dataclass
class Tree:
    """Flat-array regression tree; leaves have feature == -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                if row[self.feature[node]] <= self.threshold[node]:
                    node = self.left[node]
                else:
                    node = self.right[node]
            out[i] = self.value[node]
        return out


@dataclass
class RfConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 2
    seed: int = 0
    bootstrap: bool = True


@dataclass
class ForestModel:
    trees: list[Tree]
    n_trees: int
    max_depth: int
    min_leaf: int
    bootstrap_seed: int
    feature_names: tuple[str, ...]
    target_name: str

    @property
    def d(self) -> int:
        return len(self.feature_names)


def _best_split(X, y, rows, features, min_leaf):
    """Exact variance-reduction search over sorted unique values."""
    best = None  # (score, feature, threshold)
    y_node = y[rows]
    n = rows.size
    total = y_node.sum()
    for f in features:
        order = np.argsort(X[rows, f], kind="stable")
        xs = X[rows[order], f]
        ys = y_node[order]
        csum = np.cumsum(ys)
        k = np.arange(1, n)  # size of the left side
        valid = (xs[1:] > xs[:-1]) & (k >= min_leaf) & (n - k >= min_leaf)
        if not np.any(valid):
            continue
        left_sum = csum[:-1]
        # maximizing sum_L^2/n_L + sum_R^2/n_R minimizes within-node variance
        score = left_sum**2 / k + (total - left_sum) ** 2 / (n - k)
        score = np.where(valid, score, -np.inf)
        j = int(np.argmax(score))
        if best is None or score[j] > best[0]:
            best = (score[j], f, 0.5 * (xs[j] + xs[j + 1]))
    return best


def _grow_tree(X, y, rows, rng, max_depth, min_leaf, mtry):
    feature, threshold, left, right, value = [], [], [], [], []

    def add_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def build(rows, depth):
        node = add_node()
        y_node = y[rows]
        value[node] = float(y_node.mean())
        if depth >= max_depth or rows.size < 2 * min_leaf or np.all(y_node == y_node[0]):
            return node
        features = rng.choice(X.shape[1], size=mtry, replace=False)
        split = _best_split(X, y, rows, np.sort(features), min_leaf)
        if split is None:
            return node
        _, f, thr = split
        mask = X[rows, f] <= thr
        feature[node] = int(f)
        threshold[node] = float(thr)
        left[node] = build(rows[mask], depth + 1)
        right[node] = build(rows[~mask], depth + 1)
        return node

    build(rows, 0)
    return Tree(
        np.array(feature),
        np.array(threshold),
        np.array(left),
        np.array(right),
        np.array(value),
    )


def rf_fit(data: FlatDataset, config: RfConfig | None = None) -> ForestModel:
    """Bagged regression trees with ceil(d/3) feature subsampling per split."""
    config = config or RfConfig()
    if data.n == 0:
        raise DataError("cannot fit a forest on an empty dataset")
    if data.n < config.min_leaf:
        raise DataError(f"need at least min_leaf={config.min_leaf} rows, got {data.n}")
    X, y = data.inputs, data.targets
    mtry = max(1, math.ceil(data.d / 3))
    trees = []
    for t in range(config.n_trees):
        rng = np.random.default_rng([config.seed, t])
        if config.bootstrap:
            rows = np.sort(rng.integers(0, data.n, size=data.n))
        else:
            rows = np.arange(data.n)
        trees.append(_grow_tree(X, y, rows, rng, config.max_depth, config.min_leaf, mtry))
    return ForestModel(
        trees=trees,
        n_trees=config.n_trees,
        max_depth=config.max_depth,
        min_leaf=config.min_leaf,
        bootstrap_seed=config.seed,
        feature_names=data.feature_names,
        target_name=data.target_name,
    )


def rf_predict_batch(model: ForestModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise DataError(f"expected an m x {model.d} input matrix, got shape {X.shape}")
    out = np.zeros(X.shape[0])
    for tree in model.trees:
        out += tree.predict(X)
    return out / len(model.trees)


def rf_predict(model: ForestModel, xstar) -> float:
    x = np.asarray(xstar, dtype=float).ravel()
    if x.shape[0] != model.d:
        raise DataError(f"expected {model.d} features, got {x.shape[0]}")
    return float(rf_predict_batch(model, x[None, :])[0])


# ---------------------------------------------------------------------------
# feed-forward network
# ---------------------------------------------------------------------------


@dataclass
class MlpConfig:
    h1: int = 64
    h2: int = 64
    epochs: int = 200
    step: float = 1e-2
    batch: int = 32
    seed: int = 0
    momentum: float = 0.9
    step_decay: float = 0.01  # step_t = step / (1 + decay * epoch)


@dataclass
class MlpModel:
    """ReLU-ReLU-linear network operating on standardized data."""

    layer_sizes: tuple[int, int, int, int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    standardizer: Standardizer
    feature_names: tuple[str, ...]
    target_name: str

    @property
    def d(self) -> int:
        return self.layer_sizes[0]


def _forward(weights, biases, X):
    z1 = X @ weights[0].T + biases[0]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ weights[1].T + biases[1]
    a2 = np.maximum(z2, 0.0)
    out = a2 @ weights[2].T + biases[2]
    return out[:, 0], (X, z1, a1, z2, a2)


def loss_and_grads(weights, biases, X, y):
    """Mean squared error and its exact backpropagated gradients."""
    pred, (X, z1, a1, z2, a2) = _forward(weights, biases, X)
    resid = pred - y
    loss = float(np.mean(resid**2))
    d_out = (2.0 / X.shape[0]) * resid[:, None]
    gW3 = d_out.T @ a2
    gb3 = d_out.sum(axis=0)
    d_a2 = d_out @ weights[2]
    d_z2 = d_a2 * (z2 > 0)
    gW2 = d_z2.T @ a1
    gb2 = d_z2.sum(axis=0)
    d_a1 = d_z2 @ weights[1]
    d_z1 = d_a1 * (z1 > 0)
    gW1 = d_z1.T @ X
    gb1 = d_z1.sum(axis=0)
    return loss, [gW1, gW2, gW3], [gb1, gb2, gb3]


def mlp_init(d: int, h1: int, h2: int, rng) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """He-style initialization for the two ReLU layers."""
    weights = [
        rng.normal(0.0, math.sqrt(2.0 / d), size=(h1, d)),
        rng.normal(0.0, math.sqrt(2.0 / h1), size=(h2, h1)),
        rng.normal(0.0, math.sqrt(2.0 / h2), size=(1, h2)),
    ]
    biases = [np.zeros(h1), np.zeros(h2), np.zeros(1)]
    return weights, biases


def mlp_fit(data: FlatDataset, config: MlpConfig | None = None) -> MlpModel:
    """Mini-batch SGD (with momentum and step decay) on squared error.

    Inputs and targets are standardized internally; the fitted scaler is
    stored on the model so prediction happens in natural units.
    """
    config = config or MlpConfig()
    if data.n < 2:
        raise DataError(f"need at least 2 rows to train an MLP, got {data.n}")
    scaler = standardize_fit(data)
    X = scaler.apply_inputs(data.inputs)
    y = scaler.apply_targets(data.targets)
    rng = np.random.default_rng(config.seed)
    weights, biases = mlp_init(data.d, config.h1, config.h2, rng)
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    for epoch in range(config.epochs):
        step = config.step / (1.0 + config.step_decay * epoch)
        order = rng.permutation(data.n)
        for start in range(0, data.n, config.batch):
            batch = order[start : start + config.batch]
            loss, gw, gb = loss_and_grads(weights, biases, X[batch], y[batch])
            if not math.isfinite(loss):
                raise NumericalError(
                    f"MLP training diverged (non-finite loss) at epoch {epoch}"
                )
            for k in range(3):
                vel_w[k] = config.momentum * vel_w[k] - step * gw[k]
                vel_b[k] = config.momentum * vel_b[k] - step * gb[k]
                weights[k] = weights[k] + vel_w[k]
                biases[k] = biases[k] + vel_b[k]
    return MlpModel(
        layer_sizes=(data.d, config.h1, config.h2, 1),
        weights=weights,
        biases=biases,
        standardizer=scaler,
        feature_names=data.feature_names,
        target_name=data.target_name,
    )


def mlp_predict_batch(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise DataError(f"expected an m x {model.d} input matrix, got shape {X.shape}")
    pred, _ = _forward(model.weights, model.biases, model.standardizer.apply_inputs(X))
    return model.standardizer.invert_targets(pred)


def mlp_predict(model: MlpModel, xstar) -> float:
    x = np.asarray(xstar, dtype=float).ravel()
    if x.shape[0] != model.d:
        raise DataError(f"expected {model.d} features, got {x.shape[0]}")
    return float(mlp_predict_batch(model, x[None, :])[0])
