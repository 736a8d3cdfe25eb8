"""Versioned JSON persistence for trained models.

All model kinds share one envelope: schema_version, model_kind,
created_at, feature_names, target_name and a content_sha256 over the
numeric payload. Numbers are serialized through Python's repr (shortest
round-trip decimal), so load(save(m)) reproduces predictions bitwise.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone

import numpy as np

from .dataset import Standardizer
from .errors import DataError
from .gpr import GprModel
from .kernels import KernelSpec

SCHEMA_VERSION = 1


def _canonical_hash(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _pack_lower_triangle(L: np.ndarray) -> list[float]:
    n = L.shape[0]
    return [float(L[i, j]) for i in range(n) for j in range(i + 1)]


def _unpack_lower_triangle(flat: list[float], n: int) -> np.ndarray:
    if len(flat) != n * (n + 1) // 2:
        raise DataError(
            f"chol_factor has {len(flat)} entries, expected {n * (n + 1) // 2}"
        )
    L = np.zeros((n, n))
    pos = 0
    for i in range(n):
        L[i, : i + 1] = flat[pos : pos + i + 1]
        pos += i + 1
    return L


def _gpr_numeric_payload(doc: dict) -> dict:
    return {
        "kernel": doc["kernel"],
        "noise_variance": doc["noise_variance"],
        "prior_mean_const": doc["prior_mean_const"],
        "standardizer": {
            k: v for k, v in doc["standardizer"].items() if k != "constant_features"
        },
        "train_inputs": doc["train_inputs"],
        "train_targets": doc["train_targets"],
        "dual_coeffs": doc["dual_coeffs"],
        "chol_factor": doc["chol_factor"],
    }


def _gpr_to_doc(model: GprModel) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "model_kind": "gpr",
        "feature_names": list(model.feature_names),
        "target_name": model.target_name,
        "kernel": model.kernel.to_json(),
        "noise_variance": float(model.noise_variance),
        "prior_mean_const": float(model.prior_mean_const),
        "standardizer": model.standardizer.to_json(),
        "train_inputs": [[float(v) for v in row] for row in model.train_inputs],
        "train_targets": [float(v) for v in model.train_targets],
        "dual_coeffs": [float(v) for v in model.dual_coeffs],
        "chol_factor": _pack_lower_triangle(model.chol_factor),
    }
    doc["content_sha256"] = _canonical_hash(_gpr_numeric_payload(doc))
    return doc


def _gpr_from_doc(doc: dict) -> GprModel:
    n = len(doc["train_targets"])
    return GprModel(
        kernel=KernelSpec.from_json(doc["kernel"]),
        noise_variance=doc["noise_variance"],
        train_inputs=np.array(doc["train_inputs"], dtype=float).reshape(n, -1),
        train_targets=np.array(doc["train_targets"], dtype=float),
        chol_factor=_unpack_lower_triangle(doc["chol_factor"], n),
        dual_coeffs=np.array(doc["dual_coeffs"], dtype=float),
        standardizer=Standardizer.from_json(doc["standardizer"]),
        feature_names=tuple(doc["feature_names"]),
        target_name=doc["target_name"],
        prior_mean_const=doc["prior_mean_const"],
    )


def _forest_numeric_payload(doc: dict) -> dict:
    return {"trees": doc["trees"]}


def _forest_to_doc(model) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "model_kind": "forest",
        "feature_names": list(model.feature_names),
        "target_name": model.target_name,
        "n_trees": model.n_trees,
        "max_depth": model.max_depth,
        "min_leaf": model.min_leaf,
        "bootstrap_seed": model.bootstrap_seed,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": [float(v) for v in t.threshold],
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": [float(v) for v in t.value],
            }
            for t in model.trees
        ],
    }
    doc["content_sha256"] = _canonical_hash(_forest_numeric_payload(doc))
    return doc


def _forest_from_doc(doc: dict):
    from .baselines import ForestModel, Tree

    trees = [
        Tree(
            feature=np.array(t["feature"], dtype=int),
            threshold=np.array(t["threshold"], dtype=float),
            left=np.array(t["left"], dtype=int),
            right=np.array(t["right"], dtype=int),
            value=np.array(t["value"], dtype=float),
        )
        for t in doc["trees"]
    ]
    return ForestModel(
        trees=trees,
        n_trees=doc["n_trees"],
        max_depth=doc["max_depth"],
        min_leaf=doc["min_leaf"],
        bootstrap_seed=doc["bootstrap_seed"],
        feature_names=tuple(doc["feature_names"]),
        target_name=doc["target_name"],
    )


def _mlp_numeric_payload(doc: dict) -> dict:
    return {
        "weights": doc["weights"],
        "biases": doc["biases"],
        "standardizer": {
            k: v for k, v in doc["standardizer"].items() if k != "constant_features"
        },
    }


def _mlp_to_doc(model) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "model_kind": "mlp",
        "feature_names": list(model.feature_names),
        "target_name": model.target_name,
        "layer_sizes": list(model.layer_sizes),
        "weights": [[[float(v) for v in row] for row in W] for W in model.weights],
        "biases": [[float(v) for v in b] for b in model.biases],
        "standardizer": model.standardizer.to_json(),
    }
    doc["content_sha256"] = _canonical_hash(_mlp_numeric_payload(doc))
    return doc


def _mlp_from_doc(doc: dict):
    from .baselines import MlpModel

    return MlpModel(
        layer_sizes=tuple(doc["layer_sizes"]),
        weights=[np.array(W, dtype=float) for W in doc["weights"]],
        biases=[np.array(b, dtype=float) for b in doc["biases"]],
        standardizer=Standardizer.from_json(doc["standardizer"]),
        feature_names=tuple(doc["feature_names"]),
        target_name=doc["target_name"],
    )


_CODECS = {
    "gpr": (_gpr_to_doc, _gpr_from_doc, _gpr_numeric_payload),
    "forest": (_forest_to_doc, _forest_from_doc, _forest_numeric_payload),
    "mlp": (_mlp_to_doc, _mlp_from_doc, _mlp_numeric_payload),
}


def model_kind(model) -> str:
    from .baselines import ForestModel, MlpModel

    if isinstance(model, GprModel):
        return "gpr"
    if isinstance(model, ForestModel):
        return "forest"
    if isinstance(model, MlpModel):
        return "mlp"
    raise DataError(f"cannot persist model of type {type(model).__name__}")


def save_model(model, path) -> None:
    """Write a model to its versioned JSON file."""
    kind = model_kind(model)
    to_doc, _, _ = _CODECS[kind]
    doc = to_doc(model)
    doc["created_at"] = datetime.now(timezone.utc).isoformat()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path):
    """Load any persisted model; validates version and content checksum."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"corrupt model file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise DataError(f"corrupt model file {path}: top level is not an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataError(
            f"unsupported schema_version {version!r} in {path} "
            f"(this build reads version {SCHEMA_VERSION})"
        )
    kind = doc.get("model_kind")
    if kind not in _CODECS:
        raise DataError(f"unknown model_kind {kind!r} in {path}")
    _, from_doc, numeric_payload = _CODECS[kind]
    try:
        expected = doc["content_sha256"]
        actual = _canonical_hash(numeric_payload(doc))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"corrupt model file {path}: {exc}") from None
    if actual != expected:
        raise DataError(f"corrupt model file {path}: content checksum mismatch")
    try:
        return from_doc(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"corrupt model file {path}: {exc}") from None
