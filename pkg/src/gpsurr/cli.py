"""Command-line front end.

Subcommands: generate, train, predict, backpredict, compare, serve.
Every artifact embeds the effective config hash and seed; re-running a
command with identical inputs reproduces identical bytes except for the
wall-clock fields (created_at, train_time_s).

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import baselines, oracle
from .dataset import (
    DESIGN_FEATURES,
    CellDesign,
    CurveKind,
    FlatDataset,
    TARGET_NAME,
    flatten,
    make_inverse_dataset,
    read_runs,
    split,
    write_runs,
)
from .errors import DataError, GpsurrError, NumericalError
from .gpr import GprModel, OptimizerConfig, fit, predict, predict_batch, predict_profile
from .kernels import KernelFamily, KernelSpec
from .metrics import r2_score, rmse
from .model_io import load_model, model_kind, save_model

DEFAULT_GPR_SUBSAMPLE = 1500


def _default_seed() -> int:
    return int(os.environ.get("GPSURR_SEED", "0"))


def _config_hash(args: argparse.Namespace, exclude=("func", "config")) -> str:
    payload = {
        k: v
        for k, v in sorted(vars(args).items())
        if k not in exclude and not k.startswith("out")
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _write_json(path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def _parse_fixed(pairs: list[str] | None, design_json: str | None) -> dict:
    fixed = {}
    if design_json:
        try:
            obj = json.loads(design_json)
        except json.JSONDecodeError as exc:
            raise DataError(f"--design-json is not valid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise DataError("--design-json must be a JSON object")
        fixed.update({str(k): float(v) for k, v in obj.items()})
    for pair in pairs or ():
        name, sep, value = pair.partition("=")
        if not sep:
            raise DataError(f"--fixed expects name=value, got {pair!r}")
        try:
            fixed[name] = float(value)
        except ValueError:
            raise DataError(f"--fixed {name}: non-numeric value {value!r}") from None
    return fixed


def _parse_sweep(args) -> np.ndarray:
    if (args.sweep is None) == (args.sweep_values is None):
        raise DataError("provide exactly one of --sweep start:stop:count or --sweep-values")
    if args.sweep is not None:
        parts = args.sweep.split(":")
        if len(parts) != 3:
            raise DataError(f"--sweep expects start:stop:count, got {args.sweep!r}")
        try:
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise DataError(f"--sweep expects numbers, got {args.sweep!r}") from None
        if count < 1:
            raise DataError("--sweep count must be >= 1")
        return np.linspace(start, stop, count)
    try:
        return np.array([float(v) for v in args.sweep_values.split(",")])
    except ValueError:
        raise DataError(f"--sweep-values expects comma-separated numbers") from None


def _load_grid(path: str | None) -> oracle.GridSpec:
    if path is None:
        return oracle.default_grid()
    try:
        with open(path, encoding="utf-8") as fh:
            return oracle.GridSpec.from_json(json.load(fh))
    except FileNotFoundError:
        raise DataError(f"grid config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"grid config {path} is not valid JSON: {exc}") from None


def _load_constants(path: str | None) -> oracle.OpticalConstants:
    if path is None:
        return oracle.OpticalConstants()
    try:
        with open(path, encoding="utf-8") as fh:
            return oracle.OpticalConstants.from_json(json.load(fh))
    except FileNotFoundError:
        raise DataError(f"constants config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"constants config {path} is not valid JSON: {exc}") from None


def _prepare_training(args, data: FlatDataset):
    """Shared flatten -> feature-select -> split -> subsample pipeline."""
    if args.features:
        wanted = [f.strip() for f in args.features.split(",") if f.strip()]
        sweep_name = data.feature_names[-1]
        if sweep_name not in wanted:
            wanted.append(sweep_name)  # the sweep variable is always an input
        data = data.select_features(wanted)
    train, test = split(data, args.test_fraction, seed=args.seed, group_by_run=True)
    cap = args.subsample
    if cap is None and args.model == "gpr":
        cap = DEFAULT_GPR_SUBSAMPLE
    if cap:
        train = train.subsample(cap, seed=args.seed)
    return train, test


def _fit_model(kind: str, train: FlatDataset, args):
    if kind == "gpr":
        family = KernelFamily(args.kernel)
        init = KernelSpec(
            family,
            1.0,
            (1.0,) * train.d,
            1.0 if family is KernelFamily.RATIONAL_QUADRATIC else None,
        )
        config = OptimizerConfig(
            max_iters=args.max_iters,
            tolerance=args.tolerance,
            restarts=args.restarts,
            seed=args.seed,
        )
        return fit(train, init, init_noise=1e-2, config=config)
    if kind == "rf":
        return baselines.rf_fit(train, baselines.RfConfig(seed=args.seed))
    if kind == "mlp":
        return baselines.mlp_fit(train, baselines.MlpConfig(seed=args.seed))
    raise DataError(f"unknown model kind {kind!r} (expected gpr, rf or mlp)")


def _predict_any(model, X: np.ndarray):
    """(means, variances-or-None) for any persisted model kind."""
    if isinstance(model, GprModel):
        return predict_batch(model, X)
    if isinstance(model, baselines.ForestModel):
        return baselines.rf_predict_batch(model, X), None
    return baselines.mlp_predict_batch(model, X), None


def cmd_generate(args):
    grid = _load_grid(args.grid)
    constants = _load_constants(args.constants)
    curve = CurveKind(args.curve)
    runs = oracle.generate_database(
        grid, constants, curve_kind=curve, noise_sd=args.noise_sd, seed=args.seed
    )
    cfg_hash = oracle.config_hash(grid, constants, curve, args.noise_sd, args.seed)
    write_runs(
        runs,
        args.out,
        header_comments=(
            f"oracle_version={oracle.ORACLE_VERSION}",
            f"config_hash={cfg_hash}",
            f"seed={args.seed}",
        ),
    )
    n_rows = sum(r.sweep.size for r in runs)
    print(f"wrote {len(runs)} runs ({n_rows} rows) to {args.out}")


def cmd_train(args):
    data = flatten(read_runs(args.runs))
    train, test = _prepare_training(args, data)
    started = time.perf_counter()
    model = _fit_model(args.model, train, args)
    train_time = time.perf_counter() - started
    save_model(model, args.out)

    means, variances = _predict_any(model, test.inputs)
    metrics = {
        "model_kind": args.model,
        "features": list(train.feature_names),
        "target": train.target_name,
        "n_train": train.n,
        "n_test": test.n,
        "r2": r2_score(test.targets, means),
        "rmse": rmse(test.targets, means),
        "config_hash": _config_hash(args),
        "seed": args.seed,
        "train_time_s": train_time,
    }
    if variances is not None:
        metrics["mean_ci_width"] = float(np.mean(2 * args.z * np.sqrt(variances)))
    if args.metrics:
        _write_json(args.metrics, metrics)
    print(
        f"{args.model} model -> {args.out}  "
        f"(r2={metrics['r2']:.4f}, rmse={metrics['rmse']:.5f}, n_train={train.n})"
    )


def cmd_predict(args):
    model = load_model(args.model_file)
    fixed = _parse_fixed(args.fixed, args.design_json)
    grid = _parse_sweep(args)
    feature_names = tuple(model.feature_names)
    sweep_feature = args.sweep_feature
    if sweep_feature is None:
        candidates = [n for n in ("wavelength_nm", "depth_um") if n in feature_names]
        if not candidates:
            raise DataError(
                "model has no conventional sweep feature; pass --sweep-feature"
            )
        sweep_feature = candidates[0]

    if isinstance(model, GprModel):
        profile = predict_profile(model, fixed, sweep_feature, grid, z=args.z)
        means, variances = profile.means, profile.variances
        ci_lo, ci_hi = profile.ci_lower, profile.ci_upper
    else:
        from .gpr import _profile_inputs

        X = _profile_inputs(feature_names, fixed, sweep_feature, grid)
        means, variances = _predict_any(model, X)
        ci_lo = ci_hi = None

    oracle_truth = None
    if args.compare_oracle:
        oracle_truth = _oracle_truth(model, fixed, sweep_feature, grid)

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={_config_hash(args)} seed={args.seed}\n")
        header = "sweep,mean,variance,ci_lower,ci_upper"
        if oracle_truth is not None:
            header += ",oracle"
        fh.write(header + "\n")
        for i in range(grid.size):
            cells = [
                _fmt(grid[i]),
                _fmt(means[i]),
                _fmt(None if variances is None else variances[i]),
                _fmt(None if ci_lo is None else ci_lo[i]),
                _fmt(None if ci_hi is None else ci_hi[i]),
            ]
            if oracle_truth is not None:
                cells.append(_fmt(oracle_truth[i]))
            fh.write(",".join(cells) + "\n")
    print(f"wrote {grid.size}-point profile to {args.out}")


def _oracle_truth(model, fixed: dict, sweep_feature: str, grid: np.ndarray) -> np.ndarray:
    """Ground-truth curve for forward models whose inputs form a full design."""
    missing = [n for n in DESIGN_FEATURES if n not in fixed]
    if missing:
        raise DataError(
            f"--compare-oracle needs the full six-parameter design; missing {missing}"
        )
    design = CellDesign.from_dict(fixed)
    constants = oracle.OpticalConstants()
    if sweep_feature == "wavelength_nm":
        return oracle.simulate_reflectance(design, grid, constants).values
    if sweep_feature == "depth_um":
        return oracle.generation_at_depths(design, grid, constants)
    raise DataError(f"--compare-oracle does not support sweep feature {sweep_feature!r}")


def cmd_backpredict(args):
    data = flatten(read_runs(args.runs))
    inverse = make_inverse_dataset(data, args.target)
    train, _ = split(inverse, args.test_fraction, seed=args.seed, group_by_run=True)
    cap = args.subsample if args.subsample is not None else DEFAULT_GPR_SUBSAMPLE
    train = train.subsample(cap, seed=args.seed)
    args_model = argparse.Namespace(**{**vars(args), "model": "gpr"})
    model = _fit_model("gpr", train, args_model)

    fixed = _parse_fixed(args.fixed, args.design_json)
    perf_feature = data.target_name  # e.g. reflectance_frac, now an input
    sweep_feature = data.feature_names[-1]
    fixed.setdefault(sweep_feature, args.sweep_value)
    try:
        values = [float(v) for v in args.values.split(",")]
    except ValueError:
        raise DataError("--values expects comma-separated numbers") from None

    perf_col = train.inputs[:, train.feature_index(perf_feature)]
    lo, hi = float(perf_col.min()), float(perf_col.max())
    constants = oracle.OpticalConstants()
    requests = []
    for value in values:
        point = dict(fixed)
        point[perf_feature] = value
        x = [point[name] for name in model.feature_names if name in point]
        missing = [name for name in model.feature_names if name not in point]
        if missing:
            raise DataError(f"missing fixed features: {missing}")
        pred = predict(model, [point[name] for name in model.feature_names])
        sd = float(np.sqrt(pred.variance))
        entry = {
            "requested_value": value,
            "outside_training_range": not lo <= value <= hi,
            "predicted_mean": pred.mean,
            "predicted_sd": sd,
            "ci_lower": pred.mean - args.z * sd,
            "ci_upper": pred.mean + args.z * sd,
        }
        if args.target == "wafer_thickness_um" and perf_feature == "reflectance_frac":
            entry["oracle_closure"] = _closure_check(
                point, pred.mean, sd, fixed[sweep_feature], value, constants
            )
        requests.append(entry)

    report = {
        "target": args.target,
        "sweep_feature": sweep_feature,
        "sweep_value": fixed[sweep_feature],
        "fixed": {k: v for k, v in fixed.items() if k != sweep_feature},
        "z": args.z,
        "requests": requests,
        "n_train": train.n,
        "config_hash": _config_hash(args),
        "seed": args.seed,
    }
    _write_json(args.out, report)
    closures = [r.get("oracle_closure") for r in requests]
    summary = ", ".join(
        f"{r['requested_value']:.4g}->{r['predicted_mean']:.4g}" for r in requests
    )
    print(f"back-predicted {args.target} for {len(requests)} targets: {summary}")
    if all(c is not None for c in closures):
        errs = ", ".join(f"{c['abs_error']:.4f}" for c in closures)
        print(f"oracle closure |achieved - requested|: {errs}")


def _closure_check(point, thickness_mean, thickness_sd, wavelength, requested, constants):
    """Feed the predicted thickness back through the oracle."""

    def reflectance_at(w_um: float) -> float:
        design = CellDesign.from_dict({**point, "wafer_thickness_um": w_um})
        return float(
            oracle.simulate_reflectance(design, np.array([wavelength]), constants).values[0]
        )

    achieved = reflectance_at(thickness_mean)
    band = [achieved]
    for offset in (-2 * thickness_sd, 2 * thickness_sd):
        w = thickness_mean + offset
        if w > 0:
            band.append(reflectance_at(w))
    return {
        "achieved_value": achieved,
        "abs_error": abs(achieved - requested),
        "requested_within_2sd": min(band) <= requested <= max(band),
    }


def cmd_compare(args):
    data = flatten(read_runs(args.runs))
    train, test = split(data, args.test_fraction, seed=args.seed, group_by_run=True)
    cap = args.subsample if args.subsample is not None else DEFAULT_GPR_SUBSAMPLE
    train_capped = train.subsample(cap, seed=args.seed)

    results = {}
    timings = {}
    for kind in ("gpr", "rf", "mlp"):
        started = time.perf_counter()
        args_kind = argparse.Namespace(**{**vars(args), "model": kind})
        model = _fit_model(kind, train_capped, args_kind)
        timings[kind] = time.perf_counter() - started
        means, variances = _predict_any(model, test.inputs)
        results[kind] = (model, means, variances)

    metrics = {
        kind: {
            "r2": r2_score(test.targets, means),
            "rmse": rmse(test.targets, means),
            "reports_variance": variances is not None,
            "train_time_s": timings[kind],
        }
        for kind, (model, means, variances) in results.items()
    }
    payload = {
        "models": metrics,
        "n_train": train_capped.n,
        "n_test": test.n,
        "config_hash": _config_hash(args),
        "seed": args.seed,
    }
    if args.out_metrics:
        _write_json(args.out_metrics, payload)

    # per-sweep-point table for the first test run
    first_id = test.run_ids[0]
    rows = np.flatnonzero(test.run_ids == first_id)
    X_run = test.inputs[rows]
    sweep = X_run[:, -1]
    columns = {"sweep": sweep, "actual": test.targets[rows]}
    for kind, (model, _, _) in results.items():
        means, variances = _predict_any(model, X_run)
        columns[f"{kind}_mean"] = means
        if kind == "gpr":
            columns["gpr_variance"] = variances
    with open(args.out_table, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={_config_hash(args)} seed={args.seed} run={first_id}\n")
        names = ["sweep", "actual", "gpr_mean", "gpr_variance", "rf_mean", "mlp_mean"]
        fh.write(",".join(names) + "\n")
        for i in range(rows.size):
            fh.write(",".join(_fmt(columns[n][i]) for n in names) + "\n")

    for kind in ("gpr", "rf", "mlp"):
        m = metrics[kind]
        variance_note = "with variance" if m["reports_variance"] else "mean only"
        print(f"{kind}: r2={m['r2']:.4f} rmse={m['rmse']:.5f} ({variance_note})")


def cmd_serve(args):
    import uvicorn

    from .service.app import create_app

    app = create_app(args.models_dir, cors_origin=args.cors_origin)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="gpsurr",
        description="GP surrogate models for solar-cell optical performance",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    sub_map = {}

    def add_common(p):
        p.add_argument("--seed", type=int, default=_default_seed(),
                       help="RNG seed (env GPSURR_SEED overrides the default 0)")
        p.add_argument("--config", default=None,
                       help="JSON file of defaults for this subcommand (flags win)")

    def add_training(p):
        p.add_argument("--runs", required=True, help="input runs CSV")
        p.add_argument("--test-fraction", type=float, default=0.25)
        p.add_argument("--subsample", type=int, default=None,
                       help="cap on training rows after the split "
                            "(default: 1500 for gpr, unlimited otherwise)")
        p.add_argument("--kernel", choices=["se", "rq"], default="se")
        p.add_argument("--max-iters", type=int, default=150)
        p.add_argument("--tolerance", type=float, default=1e-5)
        p.add_argument("--restarts", type=int, default=3)
        p.add_argument("--z", type=float, default=2.0)

    p = subparsers.add_parser("generate", help="simulate a run database")
    p.add_argument("--out", required=True, help="output runs CSV")
    p.add_argument("--curve", choices=[k.value for k in CurveKind], default="reflectance")
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--grid", default=None, help="grid JSON (default: built-in 768-run grid)")
    p.add_argument("--constants", default=None, help="optical constants JSON")
    add_common(p)
    p.set_defaults(func=cmd_generate)
    sub_map["generate"] = p

    p = subparsers.add_parser("train", help="train one model on a runs CSV")
    add_training(p)
    p.add_argument("--model", choices=["gpr", "rf", "mlp"], default="gpr")
    p.add_argument("--features", default=None,
                   help="comma-separated design features to keep "
                        "(sweep variable is always kept)")
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--metrics", default=None, help="output metrics JSON")
    add_common(p)
    p.set_defaults(func=cmd_train)
    sub_map["train"] = p

    p = subparsers.add_parser("predict", help="predict a profile from a saved model")
    p.add_argument("--model-file", required=True)
    p.add_argument("--out", required=True, help="output profile CSV")
    p.add_argument("--fixed", action="append", default=None, metavar="NAME=VALUE",
                   help="fixed feature (repeatable)")
    p.add_argument("--design-json", default=None, help="fixed features as a JSON object")
    p.add_argument("--sweep", default=None, metavar="START:STOP:COUNT")
    p.add_argument("--sweep-values", default=None, metavar="V1,V2,...")
    p.add_argument("--sweep-feature", default=None,
                   help="feature to sweep (default: wavelength_nm or depth_um)")
    p.add_argument("--z", type=float, default=2.0)
    p.add_argument("--compare-oracle", action="store_true",
                   help="add a ground-truth column from the built-in oracle")
    add_common(p)
    p.set_defaults(func=cmd_predict)
    sub_map["predict"] = p

    p = subparsers.add_parser("backpredict",
                              help="invert the dataset and predict a design parameter")
    add_training(p)
    p.add_argument("--target", default="wafer_thickness_um",
                   help="design feature to back-predict")
    p.add_argument("--values", required=True, metavar="V1,V2,...",
                   help="requested performance values")
    p.add_argument("--sweep-value", type=float, required=True,
                   help="sweep-variable value (e.g. wavelength) the request is at")
    p.add_argument("--fixed", action="append", default=None, metavar="NAME=VALUE")
    p.add_argument("--design-json", default=None)
    p.add_argument("--out", required=True, help="output report JSON")
    add_common(p)
    p.set_defaults(func=cmd_backpredict)
    sub_map["backpredict"] = p

    p = subparsers.add_parser("compare", help="train gpr, rf and mlp on one split")
    add_training(p)
    p.add_argument("--out-table", required=True, help="per-sweep-point prediction CSV")
    p.add_argument("--out-metrics", default=None, help="per-model metrics JSON")
    add_common(p)
    p.set_defaults(func=cmd_compare)
    sub_map["compare"] = p

    p = subparsers.add_parser("serve", help="serve saved models over HTTP")
    p.add_argument("--models-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--cors-origin", default=None)
    add_common(p)
    p.set_defaults(func=cmd_serve)
    sub_map["serve"] = p

    return parser, sub_map


def _apply_config_file(argv: list[str], parser, sub_map) -> None:
    """Layer a JSON config under the flags of the chosen subcommand."""
    command = next((tok for tok in argv if not tok.startswith("-")), None)
    if command not in sub_map:
        return
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {known.config}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {known.config} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise DataError("config file must hold a JSON object")
    sub = sub_map[command]
    valid = {a.dest for a in sub._actions}
    unknown = sorted(set(cfg) - valid)
    if unknown:
        raise DataError(f"config file has unknown keys for {command!r}: {unknown}")
    sub.set_defaults(**cfg)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub_map = build_parser()
    try:
        _apply_config_file(argv, parser, sub_map)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        args.func(args)
        return 0
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except GpsurrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
