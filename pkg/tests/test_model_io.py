import json

import numpy as np
import pytest

from gpsurr.baselines import MlpConfig, RfConfig, mlp_fit, mlp_predict_batch, rf_fit, rf_predict_batch
from gpsurr.dataset import FlatDataset
from gpsurr.errors import DataError
from gpsurr.gpr import OptimizerConfig, predict_batch
from gpsurr.kernels import KernelFamily, KernelSpec
from gpsurr.model_io import load_model, save_model
from tests.test_gpr import build_model, random_problem


@pytest.fixture
def gpr_model():
    rng = np.random.default_rng(40)
    spec, noise, X, y = random_problem(rng, 15, 3)
    return build_model(spec, noise, X, y)


@pytest.fixture
def training_data():
    rng = np.random.default_rng(41)
    X = rng.uniform(-1, 1, size=(60, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.05 * rng.normal(size=60)
    return FlatDataset(X, y, ("a", "b", "c"), "t")


class TestGprRoundTrip:
    def test_predictions_bitwise_identical(self, gpr_model, tmp_path):
        rng = np.random.default_rng(42)
        Xq = rng.normal(size=(10, 3))
        before = predict_batch(gpr_model, Xq)
        path = tmp_path / "model.json"
        save_model(gpr_model, path)
        loaded = load_model(path)
        after = predict_batch(loaded, Xq)
        assert np.array_equal(before[0], after[0])
        assert np.array_equal(before[1], after[1])

    def test_rq_round_trip(self, tmp_path):
        rng = np.random.default_rng(43)
        spec, noise, X, y = random_problem(rng, 12, 2, KernelFamily.RATIONAL_QUADRATIC)
        model = build_model(spec, noise, X, y)
        path = tmp_path / "rq.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.kernel == model.kernel
        Xq = rng.normal(size=(5, 2))
        assert np.array_equal(predict_batch(model, Xq)[0], predict_batch(loaded, Xq)[0])

    def test_metadata_preserved(self, gpr_model, tmp_path):
        path = tmp_path / "model.json"
        save_model(gpr_model, path)
        loaded = load_model(path)
        assert loaded.feature_names == gpr_model.feature_names
        assert loaded.target_name == gpr_model.target_name


class TestFileValidation:
    def test_version_mismatch(self, gpr_model, tmp_path):
        path = tmp_path / "model.json"
        save_model(gpr_model, path)
        doc = json.loads(path.read_text())
        doc["schema_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="schema_version 99"):
            load_model(path)

    def test_truncated_file_is_data_error(self, gpr_model, tmp_path):
        path = tmp_path / "model.json"
        save_model(gpr_model, path)
        blob = path.read_text()
        path.write_text(blob[: len(blob) // 2])
        with pytest.raises(DataError, match="corrupt"):
            load_model(path)

    def test_tampered_numbers_fail_checksum(self, gpr_model, tmp_path):
        path = tmp_path / "model.json"
        save_model(gpr_model, path)
        doc = json.loads(path.read_text())
        doc["train_targets"][0] += 1.0
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="checksum"):
            load_model(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_model(tmp_path / "absent.json")

    def test_unknown_kind(self, gpr_model, tmp_path):
        path = tmp_path / "model.json"
        save_model(gpr_model, path)
        doc = json.loads(path.read_text())
        doc["model_kind"] = "svm"
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="model_kind"):
            load_model(path)


class TestBaselineRoundTrips:
    def test_forest_round_trip(self, training_data, tmp_path):
        model = rf_fit(training_data, RfConfig(n_trees=10, max_depth=6, seed=2))
        path = tmp_path / "forest.json"
        save_model(model, path)
        loaded = load_model(path)
        Xq = np.random.default_rng(44).uniform(-1, 1, size=(20, 3))
        assert np.array_equal(rf_predict_batch(model, Xq), rf_predict_batch(loaded, Xq))

    def test_mlp_round_trip(self, training_data, tmp_path):
        model = mlp_fit(training_data, MlpConfig(h1=8, h2=8, epochs=5, seed=3))
        path = tmp_path / "mlp.json"
        save_model(model, path)
        loaded = load_model(path)
        Xq = np.random.default_rng(45).uniform(-1, 1, size=(20, 3))
        assert np.array_equal(mlp_predict_batch(model, Xq), mlp_predict_batch(loaded, Xq))
