"""Simulation-run flattening, standardization, splitting and CSV interchange.

A simulation produces one curve per run (reflectance vs wavelength, or
generation vs depth). Training datasets are built by flattening: each
sweep point becomes one row whose features are the six design parameters
padded per point plus the sweep value itself.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import DataError

DESIGN_FEATURES = (
    "wafer_thickness_um",
    "substrate_doping_cm3",
    "pyramid_angle_deg",
    "rear_contact_thickness_um",
    "arc_thickness_nm",
    "back_reflectivity_frac",
)

RUNS_CSV_HEADER = (
    "run_id",
    "curve_kind",
    *DESIGN_FEATURES,
    "sweep",
    "value",
)


class CurveKind(str, Enum):
    REFLECTANCE = "reflectance"
    GENERATION = "generation"


SWEEP_FEATURE = {
    CurveKind.REFLECTANCE: "wavelength_nm",
    CurveKind.GENERATION: "depth_um",
}

TARGET_NAME = {
    CurveKind.REFLECTANCE: "reflectance_frac",
    CurveKind.GENERATION: "generation_cm3s1",
}


@dataclass(frozen=True)
class CellDesign:
    """The six varied inputs of the optical simulation."""

    wafer_thickness_um: float
    substrate_doping_cm3: float
    pyramid_angle_deg: float
    rear_contact_thickness_um: float
    arc_thickness_nm: float
    back_reflectivity_frac: float

    def __post_init__(self):
        for name in DESIGN_FEATURES:
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.wafer_thickness_um > 0:
            raise DataError(f"wafer_thickness_um must be > 0, got {self.wafer_thickness_um}")
        if not self.substrate_doping_cm3 > 0:
            raise DataError(f"substrate_doping_cm3 must be > 0, got {self.substrate_doping_cm3}")
        if not 0 < self.pyramid_angle_deg < 90:
            raise DataError(f"pyramid_angle_deg must be in (0, 90), got {self.pyramid_angle_deg}")
        if not self.rear_contact_thickness_um >= 0:
            raise DataError(
                f"rear_contact_thickness_um must be >= 0, got {self.rear_contact_thickness_um}"
            )
        if not self.arc_thickness_nm > 0:
            raise DataError(f"arc_thickness_nm must be > 0, got {self.arc_thickness_nm}")
        if not 0 <= self.back_reflectivity_frac <= 1:
            raise DataError(
                f"back_reflectivity_frac must be in [0, 1], got {self.back_reflectivity_frac}"
            )

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in DESIGN_FEATURES])

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in DESIGN_FEATURES}

    @classmethod
    def from_dict(cls, obj: dict) -> "CellDesign":
        missing = [n for n in DESIGN_FEATURES if n not in obj]
        if missing:
            raise DataError(f"design is missing fields: {', '.join(missing)}")
        return cls(**{n: obj[n] for n in DESIGN_FEATURES})


@dataclass(frozen=True)
class SimulationRun:
    """One simulated curve: a design plus (sweep, value) samples."""

    run_id: str
    design: CellDesign
    curve_kind: CurveKind
    sweep: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "curve_kind", CurveKind(self.curve_kind))
        sweep = np.asarray(self.sweep, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "sweep", sweep)
        object.__setattr__(self, "values", values)
        if sweep.ndim != 1 or values.ndim != 1 or sweep.size != values.size:
            raise DataError(
                f"run {self.run_id}: sweep and values must be 1-D and equal length "
                f"({sweep.shape} vs {values.shape})"
            )
        if sweep.size == 0:
            raise DataError(f"run {self.run_id}: empty sweep")
        if sweep.size > 1 and not np.all(np.diff(sweep) > 0):
            raise DataError(f"run {self.run_id}: sweep must be strictly increasing")
        if not np.all(np.isfinite(sweep)) or not np.all(np.isfinite(values)):
            raise DataError(f"run {self.run_id}: non-finite sweep or value entries")
        if self.curve_kind is CurveKind.REFLECTANCE:
            if np.any(values < 0) or np.any(values > 1):
                raise DataError(f"run {self.run_id}: reflectance values must lie in [0, 1]")
        else:
            if np.any(values < 0):
                raise DataError(f"run {self.run_id}: generation values must be >= 0")
            if abs(sweep[-1] - self.design.wafer_thickness_um) > 1e-9:
                raise DataError(
                    f"run {self.run_id}: last depth point {sweep[-1]} must equal "
                    f"wafer thickness {self.design.wafer_thickness_um}"
                )

    def __eq__(self, other):
        if not isinstance(other, SimulationRun):
            return NotImplemented
        return (
            self.run_id == other.run_id
            and self.design == other.design
            and self.curve_kind == other.curve_kind
            and np.array_equal(self.sweep, other.sweep)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class FlatDataset:
    """Flattened training matrix: one row per sweep point.

    ``run_ids`` preserves run boundaries so grouped splitting and
    regrouping stay possible after flattening.
    """

    inputs: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...]
    target_name: str
    run_ids: np.ndarray | None = None

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        targets = np.asarray(self.targets, dtype=float)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.run_ids is not None:
            object.__setattr__(self, "run_ids", np.asarray(self.run_ids))
        if inputs.ndim != 2:
            raise DataError(f"inputs must be 2-D, got shape {inputs.shape}")
        if targets.shape != (inputs.shape[0],):
            raise DataError(
                f"targets shape {targets.shape} does not match {inputs.shape[0]} rows"
            )
        if inputs.shape[1] != len(self.feature_names):
            raise DataError(
                f"{len(self.feature_names)} feature names for {inputs.shape[1]} columns"
            )
        if self.run_ids is not None and self.run_ids.shape != (inputs.shape[0],):
            raise DataError("run_ids must have one entry per row")
        if not np.all(np.isfinite(inputs)) or not np.all(np.isfinite(targets)):
            raise DataError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise DataError(
                f"unknown feature {name!r}; dataset has {list(self.feature_names)}"
            ) from None

    def select_features(self, names) -> "FlatDataset":
        """Column subset in the order given (for feature-relevance runs)."""
        idx = [self.feature_index(n) for n in names]
        return replace(self, inputs=self.inputs[:, idx], feature_names=tuple(names))

    def take_rows(self, rows) -> "FlatDataset":
        rows = np.asarray(rows)
        return replace(
            self,
            inputs=self.inputs[rows],
            targets=self.targets[rows],
            run_ids=None if self.run_ids is None else self.run_ids[rows],
        )

    def subsample(self, max_rows: int, seed: int) -> "FlatDataset":
        """Deterministic row subsample (original order preserved)."""
        if self.n <= max_rows:
            return self
        keep = np.random.default_rng(seed).permutation(self.n)[:max_rows]
        return self.take_rows(np.sort(keep))


@dataclass(frozen=True)
class Standardizer:
    """Per-feature affine map to zero mean and unit (population) variance."""

    means: np.ndarray
    scales: np.ndarray
    target_mean: float
    target_scale: float
    constant_features: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "scales", np.asarray(self.scales, dtype=float))
        object.__setattr__(self, "target_mean", float(self.target_mean))
        object.__setattr__(self, "target_scale", float(self.target_scale))
        object.__setattr__(self, "constant_features", tuple(self.constant_features))
        if np.any(self.scales <= 0) or self.target_scale <= 0:
            raise DataError("standardizer scales must be strictly positive")

    def apply_inputs(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.means) / self.scales

    def invert_inputs(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) * self.scales + self.means

    def apply_targets(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.target_mean) / self.target_scale

    def invert_targets(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.target_scale + self.target_mean

    def to_json(self) -> dict:
        return {
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
            "target_mean": self.target_mean,
            "target_scale": self.target_scale,
            "constant_features": list(self.constant_features),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Standardizer":
        try:
            return cls(
                means=obj["means"],
                scales=obj["scales"],
                target_mean=obj["target_mean"],
                target_scale=obj["target_scale"],
                constant_features=tuple(obj.get("constant_features", ())),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"invalid standardizer JSON: {exc}") from exc


def flatten(runs: list[SimulationRun]) -> FlatDataset:
    """Flatten runs into one training row per sweep point.

    Row order is run order then sweep order. All runs must share a curve
    kind; the sweep variable becomes the seventh feature.
    """
    if not runs:
        raise DataError("cannot flatten an empty run list")
    kind = runs[0].curve_kind
    if any(r.curve_kind is not kind for r in runs):
        kinds = sorted({r.curve_kind.value for r in runs})
        raise DataError(f"mixed curve kinds in flatten input: {kinds}")
    blocks, targets, run_ids = [], [], []
    for run in runs:
        s = run.sweep.size
        design_block = np.tile(run.design.as_vector(), (s, 1))
        blocks.append(np.column_stack([design_block, run.sweep]))
        targets.append(run.values)
        run_ids.extend([run.run_id] * s)
    return FlatDataset(
        inputs=np.vstack(blocks),
        targets=np.concatenate(targets),
        feature_names=(*DESIGN_FEATURES, SWEEP_FEATURE[kind]),
        target_name=TARGET_NAME[kind],
        run_ids=np.array(run_ids),
    )


def regroup(data: FlatDataset, curve_kind: CurveKind) -> list[SimulationRun]:
    """Inverse of flatten for datasets that kept their run_ids."""
    if data.run_ids is None:
        raise DataError("dataset has no run_ids; cannot regroup")
    if data.feature_names[: len(DESIGN_FEATURES)] != DESIGN_FEATURES:
        raise DataError("dataset features do not start with the six design parameters")
    runs = []
    boundaries = np.flatnonzero(data.run_ids[1:] != data.run_ids[:-1]) + 1
    for rows in np.split(np.arange(data.n), boundaries):
        design = CellDesign(*data.inputs[rows[0], : len(DESIGN_FEATURES)])
        runs.append(
            SimulationRun(
                run_id=str(data.run_ids[rows[0]]),
                design=design,
                curve_kind=curve_kind,
                sweep=data.inputs[rows, -1],
                values=data.targets[rows],
            )
        )
    return runs


def standardize_fit(data: FlatDataset) -> Standardizer:
    """Fit a standardizer (population std; constant columns get scale 1)."""
    if data.n < 2:
        raise DataError(f"need at least 2 rows to standardize, got {data.n}")
    means = data.inputs.mean(axis=0)
    scales = data.inputs.std(axis=0)
    constant = [data.feature_names[k] for k in np.flatnonzero(scales == 0)]
    scales = np.where(scales == 0, 1.0, scales)
    target_mean = float(data.targets.mean())
    target_scale = float(data.targets.std())
    if target_scale == 0:
        constant.append(data.target_name)
        target_scale = 1.0
    return Standardizer(means, scales, target_mean, target_scale, tuple(constant))


def standardize_apply(scaler: Standardizer, data: FlatDataset) -> FlatDataset:
    return replace(
        data,
        inputs=scaler.apply_inputs(data.inputs),
        targets=scaler.apply_targets(data.targets),
    )


def standardize_invert(scaler: Standardizer, data: FlatDataset) -> FlatDataset:
    return replace(
        data,
        inputs=scaler.invert_inputs(data.inputs),
        targets=scaler.invert_targets(data.targets),
    )


def _pick_count(total: int, fraction: float) -> int:
    k = int(round(total * fraction))
    return min(max(k, 1), total - 1)


def split(
    data: FlatDataset, test_fraction: float, seed: int, group_by_run: bool = True
) -> tuple[FlatDataset, FlatDataset]:
    """Deterministic train/test split.

    With group_by_run all rows of one simulation land on the same side,
    which prevents sweep-neighbor leakage between train and test.
    """
    if not 0 < test_fraction < 1:
        raise DataError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    if group_by_run:
        if data.run_ids is None:
            raise DataError("group_by_run requires a dataset with run_ids")
        unique_ids = list(dict.fromkeys(data.run_ids.tolist()))
        n_test = _pick_count(len(unique_ids), test_fraction)
        shuffled = rng.permutation(len(unique_ids))
        test_ids = {unique_ids[i] for i in shuffled[:n_test]}
        mask = np.array([rid in test_ids for rid in data.run_ids])
    else:
        n_test = _pick_count(data.n, test_fraction)
        shuffled = rng.permutation(data.n)
        mask = np.zeros(data.n, dtype=bool)
        mask[shuffled[:n_test]] = True
    return data.take_rows(np.flatnonzero(~mask)), data.take_rows(np.flatnonzero(mask))


def make_inverse_dataset(data: FlatDataset, new_target: str) -> FlatDataset:
    """Swap a feature column with the target column (for back-prediction)."""
    idx = data.feature_index(new_target)
    inputs = data.inputs.copy()
    new_targets = inputs[:, idx].copy()
    inputs[:, idx] = data.targets
    names = list(data.feature_names)
    names[idx] = data.target_name
    return replace(
        data,
        inputs=inputs,
        targets=new_targets,
        feature_names=tuple(names),
        target_name=new_target,
    )


def write_runs(runs: list[SimulationRun], path, header_comments: tuple[str, ...] = ()):
    """Write runs to the interchange CSV (one row per sweep point)."""
    if not runs:
        raise DataError("refusing to write an empty run list")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for comment in header_comments:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(RUNS_CSV_HEADER)
        for run in runs:
            design = [repr(float(v)) for v in run.design.as_vector()]
            for s, v in zip(run.sweep, run.values):
                writer.writerow(
                    [run.run_id, run.curve_kind.value, *design, repr(float(s)), repr(float(v))]
                )


def _parse_float(text: str, column: str, line_no: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"line {line_no}: non-numeric {column} field {text!r}") from None


def read_runs(path) -> list[SimulationRun]:
    """Read the interchange CSV back into runs.

    Rows of one run must be contiguous and sweep-sorted; every malformed
    row is rejected with its line number.
    """
    runs: list[SimulationRun] = []
    seen_ids: set[str] = set()
    current: dict | None = None

    def finalize(block):
        try:
            run = SimulationRun(
                run_id=block["run_id"],
                design=block["design"],
                curve_kind=block["kind"],
                sweep=np.array(block["sweep"]),
                values=np.array(block["values"]),
            )
        except DataError as exc:
            raise DataError(f"line {block['last_line']}: {exc}") from None
        runs.append(run)

    with open(path, encoding="utf-8") as fh:
        header_seen = False
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            row = next(csv.reader([line]))
            if not header_seen:
                if tuple(row) != RUNS_CSV_HEADER:
                    raise DataError(
                        f"line {line_no}: bad header; expected {','.join(RUNS_CSV_HEADER)}"
                    )
                header_seen = True
                continue
            if len(row) != len(RUNS_CSV_HEADER):
                raise DataError(
                    f"line {line_no}: expected {len(RUNS_CSV_HEADER)} columns, got {len(row)}"
                )
            run_id, kind_text = row[0], row[1]
            try:
                kind = CurveKind(kind_text)
            except ValueError:
                raise DataError(f"line {line_no}: unknown curve_kind {kind_text!r}") from None
            design_vals = [
                _parse_float(row[2 + k], name, line_no)
                for k, name in enumerate(DESIGN_FEATURES)
            ]
            try:
                design = CellDesign(*design_vals)
            except DataError as exc:
                raise DataError(f"line {line_no}: {exc}") from None
            sweep = _parse_float(row[-2], "sweep", line_no)
            value = _parse_float(row[-1], "value", line_no)

            if current is None or run_id != current["run_id"]:
                if current is not None:
                    finalize(current)
                if run_id in seen_ids:
                    raise DataError(f"line {line_no}: rows of run {run_id!r} are not contiguous")
                seen_ids.add(run_id)
                current = {
                    "run_id": run_id,
                    "kind": kind,
                    "design": design,
                    "sweep": [],
                    "values": [],
                    "last_line": line_no,
                }
            else:
                if kind is not current["kind"]:
                    raise DataError(f"line {line_no}: curve_kind changed within run {run_id!r}")
                if design != current["design"]:
                    raise DataError(f"line {line_no}: design changed within run {run_id!r}")
                if sweep <= current["sweep"][-1]:
                    raise DataError(
                        f"line {line_no}: sweep must be strictly increasing within run {run_id!r}"
                    )
            current["sweep"].append(sweep)
            current["values"].append(value)
            current["last_line"] = line_no
    if not header_seen:
        raise DataError(f"{path}: empty file (no header)")
    if current is None:
        raise DataError(f"{path}: no data rows")
    finalize(current)
    return runs
