"""Command-line pipelines: synth, fit, predict, cv, decompose, eval.

Every command takes ``--config`` (YAML, strictly validated), optional
``--set key.path=value`` overrides, and ``--seed`` (mandatory for synth and
cv, which are sampling commands). Outputs land under the output directory
together with a ``resolved-config.yaml`` provenance copy. All floating-point
CSV output uses 17 significant digits, so identical configs and inputs give
byte-identical files.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 1 anything unexpected. Failures print a single machine-parsable
line ``stackgp: error category=<category>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import load_config, require, write_resolved
from .cwm import cwm_predict
from .dataset import assemble_design, build_prediction_grid, load_stack_manifest, load_surveys
from .errors import ConfigError, DataError, StackGpError
from .gp import FIXABLE, fit_plain_gp, gp_stacked_predict, plain_gp_predict, PlainGpModel
from .learners import LearnerSpec
from .metrics import ambiguity_decomposition
from .model_io import load_model, save_model
from .stacking import (CV_METHOD_CWM, CV_METHOD_GP, CV_METHOD_PLAIN, StackState,
                       fit_design1, fit_design2, fit_design3, make_folds,
                       repeat_cv_evaluate)
from .synth import ScenarioConfig, generate, write_scenario

CV_METHODS = ("level0", CV_METHOD_CWM, CV_METHOD_GP, CV_METHOD_PLAIN)


def _fmt(x) -> str:
    """17-significant-digit decimal, the fixed format for all CSV output."""
    return format(float(x), ".17g")


def _resolve_seed(config: dict, args, required: bool) -> int:
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be a non-negative integer")
        return args.seed
    if required:
        raise ConfigError(f"--seed is required for '{args.command}'")
    return int(config.get("seed", 0))


def _output_dir(config: dict, args) -> Path:
    out = args.output_dir or config.get("output_dir")
    if not out:
        raise ConfigError("set output_dir in the config or pass --output-dir")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_training(config: dict):
    surveys_path, stack_path = require(config, "data", "surveys", "stack")
    records = load_surveys(surveys_path)
    if not records:
        raise DataError(f"{surveys_path}: no survey records")
    covariates = load_stack_manifest(stack_path)
    X = assemble_design(records, covariates)
    y = np.array([r.y for r in records])
    points = np.array([[r.lon, r.lat, r.t] for r in records])
    return records, covariates, X, y, points


def _learner_specs(config: dict) -> list:
    entries = require(config, "stacking", "learners")
    if not isinstance(entries, list) or not entries:
        raise ConfigError("stacking.learners must be a non-empty list of learner specs")
    specs = []
    for entry in entries:
        if not isinstance(entry, dict):
            raise ConfigError(f"each learner entry must be a mapping, got {entry!r}")
        specs.append(LearnerSpec.from_dict(entry))
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError(f"learner names must be unique, got {names}")
    return specs


def _gp_options(config: dict) -> dict:
    body = config.get("gp", {})
    out = {}
    for key in ("restarts", "max_iter", "seed"):
        if key in body:
            v = body[key]
            if not isinstance(v, int) or isinstance(v, bool) or v < (0 if key == "seed" else 1):
                raise ConfigError(f"gp.{key} must be a positive integer, got {v!r}")
            out[key] = v
    if "fixed" in body:
        fixed = body["fixed"]
        if not isinstance(fixed, dict):
            raise ConfigError("gp.fixed must be a mapping of parameter overrides")
        bad = sorted(set(fixed) - set(FIXABLE))
        if bad:
            raise ConfigError(f"gp.fixed: unknown parameter(s) {bad}; allowed {list(FIXABLE)}")
        out["fixed"] = dict(fixed)
    return out


def _write_csv(path: Path, header: list, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_synth(config: dict, args) -> int:
    seed = _resolve_seed(config, args, required=True)
    if "synth" not in config:
        raise ConfigError("command needs a 'synth' section in the config")
    scenario = ScenarioConfig.from_dict({**config["synth"], "seed": seed})
    outdir = _output_dir(config, args)
    bundle = generate(scenario)
    files = write_scenario(bundle, outdir)
    write_resolved({**config, "seed": seed}, outdir)
    for label, path in files.items():
        print(f"{label}: {path}")
    return 0


def cmd_fit(config: dict, args) -> int:
    seed = _resolve_seed(config, args, required=False)
    outdir = _output_dir(config, args)
    _, _, X, y, points = _load_training(config)
    stacking = config.get("stacking", {})
    design = stacking.get("design", 1)
    v = stacking.get("v", 5)
    if not isinstance(v, int) or isinstance(v, bool) or v < 2:
        raise ConfigError(f"stacking.v must be an integer >= 2, got {v!r}")
    gp_options = _gp_options(config)

    if design == "plain-gp":
        model = fit_plain_gp(y, X.values, points, **gp_options)
    elif design in (1, 2, 3):
        plan = make_folds(len(y), v, seed)
        if design == 1:
            level1 = stacking.get("level1", "gp")
            model = fit_design1(X, y, points, _learner_specs(config), level1, plan,
                                gp_options or None)
        elif design == 2:
            model = fit_design2(X, y, points, _learner_specs(config), plan,
                                gp_options or None)
        else:
            specs = _learner_specs(config)
            if len(specs) != 1:
                raise ConfigError(f"design 3 takes exactly one learner, got {len(specs)}")
            variants = stacking.get("gp_variants")
            if not isinstance(variants, list) or not variants:
                raise ConfigError("design 3 needs stacking.gp_variants, a non-empty list "
                                  "of fixed-parameter mappings")
            for variant in variants:
                if not isinstance(variant, dict):
                    raise ConfigError(f"each gp_variant must be a mapping, got {variant!r}")
                bad = sorted(set(variant) - set(FIXABLE))
                if bad:
                    raise ConfigError(f"gp_variant keys {bad} unknown; allowed {list(FIXABLE)}")
            model = fit_design3(X, y, points, specs[0], variants, plan, gp_options or None)
    else:
        raise ConfigError(f"stacking.design must be 1, 2, 3 or 'plain-gp', got {design!r}")

    model_path = outdir / "model.json"
    save_model(model, model_path)
    write_resolved({**config, "seed": seed}, outdir)
    print(f"model: {model_path}")
    return 0


def _stack_mean_sd(state: StackState, P_pred: np.ndarray, points) -> tuple:
    """Predictive mean and sd for any fitted stack.

    The CWM has no predictive distribution, so its sd is 0. For the two-level
    designs the per-member GP sds are combined with the same simplex weights
    as the means (exact if members were perfectly correlated, conservative
    otherwise).
    """
    if state.level1_kind == "cwm":
        mean = cwm_predict(state.level1, P_pred)
        return mean, np.zeros_like(mean)
    if state.level1_kind == "gp":
        post = gp_stacked_predict(state.level1, P_pred, points)
        return post.mu_star, post.sd
    mean = np.zeros(P_pred.shape[0])
    sd = np.zeros(P_pred.shape[0])
    stack = state.level1
    for w, member, col in zip(stack.weights.beta, stack.members, stack.member_columns):
        cols = P_pred if member.params.beta.size == P_pred.shape[1] else P_pred[:, [col]]
        post = gp_stacked_predict(member, cols, points)
        mean += w * post.mu_star
        sd += w * post.sd
    return mean, sd


def cmd_predict(config: dict, args) -> int:
    seed = _resolve_seed(config, args, required=False)
    outdir = _output_dir(config, args)
    model_path, months = require(config, "predict", "model", "months")
    if not isinstance(months, list) or not months or \
            not all(isinstance(t, int) and not isinstance(t, bool) and t >= 0 for t in months):
        raise ConfigError(f"predict.months must be a non-empty list of month indices, got {months!r}")
    stack_path = require(config, "data", "stack")
    covariates = load_stack_manifest(stack_path)
    geometry = covariates[0].geometry
    model = load_model(model_path)

    rows = []
    for t in months:
        grid = build_prediction_grid(geometry, t, covariates)
        points = np.array(grid.cell_points())
        if isinstance(model, StackState):
            P_pred = np.column_stack([m.predict(grid.design) for m in model.level0])
            mean, sd = _stack_mean_sd(model, P_pred, points)
        elif isinstance(model, PlainGpModel):
            post = plain_gp_predict(model, grid.design.values, points)
            mean, sd = post.mu_star, post.sd
        else:
            raise DataError(f"cannot predict with model type {type(model).__name__}")
        for (lon, lat, _), m, s in zip(grid.cell_points(), mean, sd):
            rows.append([_fmt(lon), _fmt(lat), t, _fmt(m), _fmt(s)])

    out_path = outdir / "predictions.csv"
    _write_csv(out_path, ["lon", "lat", "t", "mean", "sd"], rows)
    write_resolved({**config, "seed": seed}, outdir)
    print(f"predictions: {out_path} ({len(rows)} rows)")
    return 0


def cmd_cv(config: dict, args) -> int:
    seed = _resolve_seed(config, args, required=True)
    outdir = _output_dir(config, args)
    _, _, X, y, points = _load_training(config)
    specs = _learner_specs(config)
    stacking = config.get("stacking", {})
    v = stacking.get("v", 5)
    body = config.get("cv", {})
    repeats = body.get("repeats", 5)
    region = body.get("region", "region")
    methods = body.get("methods", list(CV_METHODS))
    if not isinstance(methods, list) or not methods:
        raise ConfigError("cv.methods must be a non-empty list")
    bad = sorted(set(methods) - set(CV_METHODS))
    if bad:
        raise ConfigError(f"cv.methods {bad} unknown; valid methods are {list(CV_METHODS)}")
    if not isinstance(repeats, int) or isinstance(repeats, bool) or repeats < 1:
        raise ConfigError(f"cv.repeats must be an integer >= 1, got {repeats!r}")
    if not isinstance(region, str) or not region:
        raise ConfigError(f"cv.region must be a non-empty string, got {region!r}")

    result = repeat_cv_evaluate(X, y, points, specs, v=v, repeats=repeats, seed=seed,
                                region=region, gp_options=_gp_options(config) or None,
                                methods=tuple(methods))

    metrics_path = outdir / "metrics.csv"
    _write_csv(metrics_path, ["method", "region", "repeat", "mse", "mae", "correlation"],
               [[r.method, r.region, r.repeat, _fmt(r.mse), _fmt(r.mae), _fmt(r.correlation)]
                for r in result.rows])
    summary_path = outdir / "summary.csv"
    _write_csv(summary_path,
               ["method", "region", "mse", "mae", "correlation", "n_degenerate_correlation"],
               [[s["method"], s["region"], _fmt(s["mse"]), _fmt(s["mae"]),
                 _fmt(s["correlation"]), s["n_degenerate_correlation"]]
                for s in result.summary])
    write_resolved({**config, "seed": seed}, outdir)
    print(f"metrics: {metrics_path}")
    print(f"summary: {summary_path}")
    return 0


def cmd_decompose(config: dict, args) -> int:
    seed = _resolve_seed(config, args, required=False)
    outdir = _output_dir(config, args)
    model_path = require(config, "decompose", "model")
    surveys_path = require(config, "data", "surveys")
    model = load_model(model_path)
    if not isinstance(model, StackState) or model.level1_kind != "cwm":
        raise ConfigError("decompose needs a design-1 stack with a CWM level-1")
    records = load_surveys(surveys_path)
    y = np.array([r.y for r in records])
    if len(y) != model.H.shape[0]:
        raise DataError(f"model was fitted on {model.H.shape[0]} rows, "
                        f"surveys file has {len(y)}")
    report = ambiguity_decomposition(model.H, model.level1.beta, y)

    point_path = outdir / "decompose.csv"
    pw = report.pointwise
    _write_csv(point_path, ["row", "weighted_error", "ambiguity", "ensemble_error"],
               [[i, _fmt(pw["weighted_error"][i]), _fmt(pw["ambiguity"][i]),
                 _fmt(pw["ensemble_error"][i])] for i in range(len(y))])
    summary_path = outdir / "decompose-summary.csv"
    _write_csv(summary_path, ["weighted_error", "ambiguity", "ensemble_error", "residual"],
               [[_fmt(report.weighted_error), _fmt(report.ambiguity),
                 _fmt(report.ensemble_error), _fmt(report.residual)]])
    write_resolved({**config, "seed": seed}, outdir)
    print(f"decomposition: {point_path}")
    print(f"summary: {summary_path}")
    return 0


def _read_table(path) -> dict:
    """Read a CSV keyed by (lon, lat, t); remaining columns stay as strings."""
    path = Path(path)
    out = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fieldnames = reader.fieldnames or []
        for need in ("lon", "lat", "t"):
            if need not in fieldnames:
                raise DataError(f"{path}: missing required column '{need}'")
        for lineno, row in enumerate(reader, start=2):
            try:
                key = (float(row["lon"]), float(row["lat"]), int(row["t"]))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad key fields: {exc}") from exc
            out[key] = row
    if not out:
        raise DataError(f"{path}: no data rows")
    return out


def cmd_eval(config: dict, args) -> int:
    from .metrics import mae as mae_fn, mse as mse_fn, pearson_flagged

    seed = _resolve_seed(config, args, required=False)
    outdir = _output_dir(config, args)
    pred_path, truth_path = require(config, "eval", "predictions", "truth")
    body = config.get("eval", {})
    pred_field = body.get("prediction_field", "mean")
    truth_field = body.get("truth_field", "latent")

    pred = _read_table(pred_path)
    truth = _read_table(truth_path)
    keys = sorted(set(pred) & set(truth))
    if not keys:
        raise DataError("eval: the two tables share no (lon, lat, t) keys")
    missing = len(pred) - len(keys), len(truth) - len(keys)

    def column(table, field_name, path):
        vals = []
        for k in keys:
            if field_name not in table[k] or table[k][field_name] is None:
                raise DataError(f"{path}: missing column '{field_name}'")
            vals.append(float(table[k][field_name]))
        return np.array(vals)

    yhat = column(pred, pred_field, pred_path)
    ytrue = column(truth, truth_field, truth_path)
    corr, degenerate = pearson_flagged(yhat, ytrue)
    summary_path = outdir / "eval-summary.csv"
    _write_csv(summary_path,
               ["n", "mse", "mae", "correlation", "degenerate_correlation",
                "unmatched_predictions", "unmatched_truth"],
               [[len(keys), _fmt(mse_fn(yhat, ytrue)), _fmt(mae_fn(yhat, ytrue)),
                 _fmt(corr), int(degenerate), missing[0], missing[1]]])
    write_resolved({**config, "seed": seed}, outdir)
    print(f"eval: {summary_path} (n={len(keys)}, mse={_fmt(mse_fn(yhat, ytrue))})")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "cv": cmd_cv,
    "decompose": cmd_decompose,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", required=True, help="run config YAML")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY.PATH=VALUE", help="override a config value")
    common.add_argument("--seed", type=int, default=None,
                        help="random seed (mandatory for synth and cv)")
    common.add_argument("--output-dir", default=None,
                        help="override the config output_dir")
    parser = argparse.ArgumentParser(
        prog="stackgp",
        description="Stacked geostatistical prevalence modelling pipelines.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "generate a synthetic scenario with known truth",
        "fit": "fit a stacked model (or the plain-GP baseline) and save it",
        "predict": "predict a lattice from a saved model (mean and sd per cell)",
        "cv": "repeated v-fold cross-validated comparison of all methods",
        "decompose": "ambiguity decomposition of a fitted CWM stack",
        "eval": "score a prediction table against a truth table",
    }
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.overrides)
        return COMMANDS[args.command](config, args)
    except StackGpError as exc:
        print(f"stackgp: error category={exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        # unreadable or missing input files are data problems, not crashes
        print(f"stackgp: error category=data: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - safety net
        print(f"stackgp: error category=internal: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
