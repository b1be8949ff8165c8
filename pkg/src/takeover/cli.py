"""Command-line entry point: ``takeover <command> [flags]``.

Every command writes its outputs plus ``<out>.manifest.json`` (command,
echoed configuration, dataset fingerprint, wall time). Outputs other than
the manifest are byte-identical for identical flags and inputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import booster, dataset, explain, pipeline
from .booster import Hyperparams
from .dataset import MERGED_TIME_BUDGET, DEFAULT_SCHEMA, TARGET, Dataset, GeneratorSpec, VariableSpec
from .errors import TakeoverError

OUT_DIR_ENV = "TAKEOVER_OUT_DIR"

COMMANDS = ("ingest", "synth", "train", "cv", "grid", "select", "explain", "bins", "baseline", "predict")

# Known variables by name, for inferring a schema from a CSV header.
KNOWN_VARIABLES: dict[str, VariableSpec] = {v.name: v for v in DEFAULT_SCHEMA}
KNOWN_VARIABLES[MERGED_TIME_BUDGET] = VariableSpec(MERGED_TIME_BUDGET, dataset.CONTINUOUS, (), "seconds")


class CliError(TakeoverError):
    module = "cli"


# Stand-in generator shaped after the reported effects: urgency and time
# budget dominate, age peaks mid-range, urgency interacts with visual TORs.
DEFAULT_GENERATOR = GeneratorSpec(
    intercept=1.6,
    piecewise={"TBTC": ([2.0, 8.0, 15.0, 30.0], [0.0, 0.5, 1.1, 1.6]), "AGE": ([18.0, 45.0, 75.0], [0.0, 0.7, 0.1])},
    offsets={"URG": {0: 0.9, 1: 0.3, 2: -0.6}, "HAND": {1: 0.35}, "SIM": {2: -0.25}, "IRU": {1: 0.2}},
    interactions=[("URG", 0, "TOR_V", 1, 0.6), ("URG", 2, "TOR_V", 0, 0.3)],
    noise_sd=0.4,
    missing_rate=0.0967,
    n_rows=519,
)


# ------------------------------------------------------------------ helpers


def parse_seeds(text: str) -> list[int]:
    """``a..b`` (inclusive) ranges and comma lists, e.g. ``0..9`` or ``1,4,7..9``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise CliError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise CliError(f"no seeds in {text!r}")
    return seeds


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if not math.isfinite(v) else v
    return obj


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=1, allow_nan=False) + "\n"


def _write(path: Path, text: str, written: list[str]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    written.append(str(path))


def _out_path(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_DIR_ENV, ".")) / default_name


def _companion(path: Path, suffix: str) -> Path:
    return path.with_suffix(suffix)


def schema_from_header(header: Sequence[str], target: str = TARGET) -> tuple[VariableSpec, ...]:
    cols = [h.strip() for h in header if h.strip() != target]
    unknown = [c for c in cols if c not in KNOWN_VARIABLES]
    if unknown:
        raise CliError(f"unknown columns {unknown}; supply --schema with their definitions")
    return tuple(KNOWN_VARIABLES[c] for c in cols)


def _load_schema(path: str) -> tuple[VariableSpec, ...]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return tuple(VariableSpec(v["name"], v["kind"], tuple(v.get("levels", ())), v.get("unit", "")) for v in raw)


def load_data(args, preprocess: bool = True) -> Dataset:
    path = Path(args.data)
    if not path.is_file():
        raise CliError(f"data file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if getattr(args, "schema", None):
        schema = _load_schema(args.schema)
    else:
        header = next(csv.reader(io.StringIO(text.lstrip("﻿"))), [])
        schema = schema_from_header(header)
    d = dataset.parse_table(text, schema)
    if preprocess:
        d = dataset.preprocess(d, merge_time_budgets=not args.no_merge, outlier_threshold=args.outlier_threshold)
    return d


def load_model(path: str) -> booster.Ensemble:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"model file not found: {p}")
    return booster.loads(p.read_text(encoding="utf-8"))


def hyperparams(args) -> Hyperparams:
    p = Hyperparams()
    if getattr(args, "params", None):
        with open(args.params, encoding="utf-8") as fh:
            p = Hyperparams.from_dict(json.load(fh))
    overrides = {
        name: getattr(args, name)
        for name in ("n_estimators", "learning_rate", "max_depth", "subsample", "colsample_bytree",
                     "reg_lambda", "reg_gamma", "min_child_weight", "seed")
        if getattr(args, name, None) is not None
    }
    return replace(p, **overrides)


def _features(args, d: Dataset) -> list[str] | None:
    if not getattr(args, "features", None):
        return None
    names = [f.strip() for f in args.features.split(",") if f.strip()]
    for n in names:
        d.index(n)
    return names


# ----------------------------------------------------------------- commands


def cmd_ingest(args, written):
    d = load_data(args)
    out = _out_path(args, "summary.json")
    stats = dataset.summarize(d)
    _write(out, dump_json({"summary": stats.to_dict(), "schema": [v.to_dict() for v in d.schema]}), written)
    if args.clean_out:
        _write(Path(args.clean_out), dataset.to_csv(d), written)
    return d


def cmd_synth(args, written):
    spec = DEFAULT_GENERATOR
    if args.generator:
        with open(args.generator, encoding="utf-8") as fh:
            raw = json.load(fh)
        raw["offsets"] = {k: {int(c): e for c, e in v.items()} for k, v in raw.get("offsets", {}).items()}
        raw["interactions"] = [tuple(t) for t in raw.get("interactions", [])]
        raw["piecewise"] = {k: tuple(v) for k, v in raw.get("piecewise", {}).items()}
        spec = GeneratorSpec(**raw)
    overrides = {}
    if args.rows is not None:
        overrides["n_rows"] = args.rows
    if args.noise is not None:
        overrides["noise_sd"] = args.noise
    if args.missing is not None:
        overrides["missing_rate"] = args.missing
    spec = replace(spec, **overrides)
    d, _ = dataset.synthesize(DEFAULT_SCHEMA, spec, args.seed)
    _write(_out_path(args, "synthetic.csv"), dataset.to_csv(d), written)
    return d


def cmd_train(args, written):
    d = load_data(args)
    feats = _features(args, d)
    if feats:
        d = d.select(feats)
    m = booster.train(d, hyperparams(args))
    _write(_out_path(args, "model.json"), booster.dumps(m) + "\n", written)
    return d


def cmd_cv(args, written):
    d = load_data(args)
    rep = pipeline.cross_validate(d, hyperparams(args), args.k, parse_seeds(args.seeds), _features(args, d), args.threads)
    _write(_out_path(args, "cv.json"), dump_json(rep.to_dict()), written)
    return d


def cmd_grid(args, written):
    d = load_data(args)
    grid = pipeline.DEFAULT_GRID
    if args.grid:
        with open(args.grid, encoding="utf-8") as fh:
            grid = json.load(fh)
    best, rep = pipeline.grid_search(
        d, grid, args.k, parse_seeds(args.seeds), _features(args, d), hyperparams(args), args.threads
    )
    _write(_out_path(args, "grid.json"), dump_json({"best_params": best.to_dict(), "cv": rep.to_dict()}), written)
    return d


def _json_and_csv(args, default_stem: str, payload: dict, table: str, written):
    out = _out_path(args, default_stem + ".json")
    if out.suffix == ".csv":
        _write(out, table, written)
        _write(_companion(out, ".json"), dump_json(payload), written)
    else:
        _write(out, dump_json(payload), written)
        _write(_companion(out, ".csv"), table, written)


def cmd_select(args, written):
    d = load_data(args)
    rep = pipeline.forward_select(d, hyperparams(args), args.k, parse_seeds(args.seeds), args.threads)
    _json_and_csv(args, "selection", rep.to_dict(), rep.to_csv(), written)
    return d


def cmd_bins(args, written):
    d = load_data(args)
    bounds = [float(b) for b in args.bounds.split(",")]
    rep = pipeline.bin_analysis(d, hyperparams(args), args.k, parse_seeds(args.seeds), _features(args, d), bounds, args.threads)
    _json_and_csv(args, "bins", rep.to_dict(), rep.to_csv(), written)
    return d


def cmd_baseline(args, written):
    d = load_data(args)
    feats = _features(args, d)
    seeds = parse_seeds(args.seeds)
    model, lin = pipeline.fit_linear_baseline(d, feats, args.k, seeds, args.threads)
    boosted = pipeline.cross_validate(d, hyperparams(args), args.k, seeds, feats, args.threads)
    rows = [
        ["boosted trees", boosted.mean.rmse, boosted.mean.adj_r2, boosted.mean.mae, boosted.mean.corr],
        ["linear regression", lin.mean.rmse, lin.mean.adj_r2, lin.mean.mae, lin.mean.corr],
    ]
    payload = {"linear_model": model.to_dict(), "linear": lin.to_dict(), "boosted": boosted.to_dict()}
    _json_and_csv(args, "baseline", payload, pipeline._table(("model", "rmse", "adj_r2", "mae", "corr"), rows), written)
    return d


def _align(m: booster.Ensemble, d: Dataset) -> Dataset:
    if m.feature_names and list(m.feature_names) != d.names:
        return d.select(list(m.feature_names))
    return d


def cmd_explain(args, written):
    m = load_model(args.model)
    d = _align(m, load_data(args))
    out = _out_path(args, "explain.json")
    if args.global_:
        _write(out, dump_json(explain.global_importance(m, d).to_dict()), written)
    elif args.dependence:
        recs = explain.dependence_data(m, d, args.dependence)
        _write(out, dump_json({"feature": args.dependence, "records": recs}), written)
        _write(_companion(out, ".csv"), explain.dependence_csv(recs), written)
    elif args.force is not None:
        _write(out, dump_json(explain.force_data(m, d.X[args.force]).to_dict()), written)
    elif args.interactions is not None:
        _write(out, dump_json(explain.interactions(m, d.X[args.interactions]).to_dict()), written)
    else:
        base, phi = explain.shap_values(m, d)
        _write(out, dump_json({"base_value": base, "feature_names": list(m.feature_names), "phi": phi}), written)
    return d


def _parse_assignments(text: str, names: Sequence[str]) -> list[float | None]:
    values: dict[str, float] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise CliError(f"expected NAME=VALUE, got {part!r}")
        k, v = part.split("=", 1)
        k = k.strip()
        if k not in names:
            raise CliError(f"unknown feature {k!r}; model features are {list(names)}")
        values[k] = float(v)
    return [values.get(n) for n in names]


def cmd_predict(args, written):
    m = load_model(args.model)
    x = _parse_assignments(args.values or "", m.feature_names)
    y = booster.predict(m, x)
    payload = {"features": dict(zip(m.feature_names, x)), "prediction": y}
    if args.explain:
        payload["force"] = explain.force_data(m, x).to_dict()
    _write(_out_path(args, "prediction.json"), dump_json(payload), written)
    print(repr(y))
    return None


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="takeover", description=__doc__.splitlines()[0])
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    def data_flags(p, required=True):
        p.add_argument("--data", required=required, help="CSV with one column per variable plus takeover_time")
        p.add_argument("--schema", help="JSON list of variable definitions (default: inferred from the header)")
        p.add_argument("--no-merge", action="store_true", help="keep TBTC and TBTB as separate columns")
        p.add_argument("--outlier-threshold", type=float, default=dataset.DEFAULT_OUTLIER_THRESHOLD)

    def hp_flags(p):
        p.add_argument("--params", help="JSON file of hyperparameters")
        p.add_argument("--n-estimators", type=int)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--max-depth", type=int)
        p.add_argument("--subsample", type=float)
        p.add_argument("--colsample-bytree", type=float)
        p.add_argument("--reg-lambda", type=float)
        p.add_argument("--reg-gamma", type=float)
        p.add_argument("--min-child-weight", type=float)
        p.add_argument("--seed", type=int)

    def cv_flags(p):
        p.add_argument("--k", type=int, default=10)
        p.add_argument("--seeds", default="0..99")
        p.add_argument("--threads", type=int, default=1)

    def out_flag(p):
        p.add_argument("--out", help=f"output path (default: ${OUT_DIR_ENV} or the working directory)")

    p = sub.add_parser("ingest", help="validate, preprocess and summarise a CSV")
    data_flags(p)
    out_flag(p)
    p.add_argument("--clean-out", help="also write the preprocessed CSV here")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--rows", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float)
    p.add_argument("--missing", type=float)
    p.add_argument("--generator", help="JSON generator definition")
    out_flag(p)

    p = sub.add_parser("train", help="train a boosted ensemble")
    data_flags(p)
    hp_flags(p)
    p.add_argument("--features")
    out_flag(p)

    for name, helptext in (("cv", "repeated k-fold cross-validation"), ("bins", "cumulative time-bin analysis"), ("baseline", "linear baseline vs boosted trees")):
        p = sub.add_parser(name, help=helptext)
        data_flags(p)
        hp_flags(p)
        cv_flags(p)
        p.add_argument("--features")
        out_flag(p)
        if name == "bins":
            p.add_argument("--bounds", default="2,3,4,5,6,7,8,9")

    p = sub.add_parser("grid", help="hyperparameter grid search")
    data_flags(p)
    hp_flags(p)
    cv_flags(p)
    p.add_argument("--features")
    p.add_argument("--grid", help="JSON object mapping parameter names to value lists")
    out_flag(p)

    p = sub.add_parser("select", help="importance-guided forward selection")
    data_flags(p)
    hp_flags(p)
    cv_flags(p)
    out_flag(p)

    p = sub.add_parser("explain", help="Shapley explanations for a trained model")
    p.add_argument("--model", required=True)
    data_flags(p)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--global", dest="global_", action="store_true", help="global importance ranking")
    mode.add_argument("--dependence", metavar="FEATURE", help="dependence/main-effect records")
    mode.add_argument("--force", type=int, metavar="ROW", help="force-plot data for one row")
    mode.add_argument("--interactions", type=int, metavar="ROW", help="interaction matrix for one row")
    out_flag(p)

    p = sub.add_parser("predict", help="predict one instance")
    p.add_argument("--model", required=True)
    p.add_argument("--values", help="NAME=VALUE pairs, comma separated; omitted features are missing")
    p.add_argument("--explain", action="store_true", help="include force-plot data")
    out_flag(p)
    return ap


HANDLERS = {
    "ingest": cmd_ingest, "synth": cmd_synth, "train": cmd_train, "cv": cmd_cv, "grid": cmd_grid,
    "select": cmd_select, "explain": cmd_explain, "bins": cmd_bins, "baseline": cmd_baseline,
    "predict": cmd_predict,
}


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    written: list[str] = []
    started = time.perf_counter()
    started_at = datetime.now(timezone.utc).isoformat()
    try:
        d = HANDLERS[args.command](args, written)
    except TakeoverError as e:
        print(f"takeover {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, json.JSONDecodeError) as e:
        print(f"takeover {args.command}: error: [cli] {e}", file=sys.stderr)
        return 2
    if written:
        manifest = {
            "command": args.command,
            "config": {k: v for k, v in vars(args).items()},
            "dataset_fingerprint": None if d is None else d.fingerprint(),
            "outputs": written,
            "started_at": started_at,
            "wall_time_s": time.perf_counter() - started,
        }
        Path(written[0] + ".manifest.json").write_text(dump_json(manifest), encoding="utf-8")
    return 0


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
