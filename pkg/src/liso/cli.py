"""Command-line interface.

Every failure prints one line ``ERROR <CODE>: <message>`` to stderr and exits
with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from typing import Optional

import numpy as np

from .backfit import (
    UNCONSTRAINED,
    AdditiveModel,
    Dataset,
    LisoConfig,
    default_grid,
    lambda_max,
    liso_fit,
    liso_path,
    normalize_direction,
)
from .modelsel import cross_validate, cv_adaptive, cv_sign_discovery
from .variants import ReweightSpec, SignedModel, adaptive_liso, adaptive_sign_discovery, signed_liso


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = 1):
        super().__init__(message)
        self.code = code
        self.status = status


def _fmt(v) -> str:
    return repr(float(v))


def read_table(path: str) -> tuple:
    """Header and float matrix of a numeric CSV file."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise CliError("IO", f"cannot read {path}: {e.strerror}") from None
    except UnicodeDecodeError:
        raise CliError("CSV_MALFORMED", f"{path} is not valid UTF-8") from None
    if not rows:
        raise CliError("CSV_MALFORMED", f"{path} is empty; a header row is required")
    header = [h.strip() for h in rows[0]]
    if any(h == "" for h in header):
        raise CliError("CSV_MALFORMED", f"{path}: empty column name in header")
    if len(set(header)) != len(header):
        raise CliError("CSV_MALFORMED", f"{path}: duplicate column names in header")
    body = [r for r in rows[1:] if r]
    if not body:
        raise CliError("CSV_MALFORMED", f"{path}: no data rows")
    out = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise CliError("CSV_MALFORMED",
                           f"{path} row {i}: expected {len(header)} cells, found {len(row)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                raise CliError("MISSING_CELL", f"{path} row {i}, column {header[j]!r}: empty cell")
            try:
                v = float(cell)
            except ValueError:
                raise CliError("NON_NUMERIC",
                               f"{path} row {i}, column {header[j]!r}: {cell!r} is not a number") from None
            if not math.isfinite(v):
                raise CliError("NON_FINITE", f"{path} row {i}, column {header[j]!r}: {cell!r}")
            out[i - 2, j] = v
    return header, out


def load_dataset(path: str, response: str) -> Dataset:
    header, table = read_table(path)
    if response not in header:
        raise CliError("UNKNOWN_COLUMN", f"response column {response!r} not in {path}")
    j = header.index(response)
    names = [h for h in header if h != response]
    if not names:
        raise CliError("CSV_MALFORMED", f"{path} has no covariate columns")
    x = np.delete(table, j, axis=1)
    try:
        return Dataset(x, table[:, j], names=names)
    except ValueError as e:
        raise CliError("INVALID_DATA", str(e)) from None


def parse_directions(specs, names) -> tuple:
    dirs = ["increasing"] * len(names)
    for spec in specs or ():
        for item in spec.split(","):
            if not item:
                continue
            col, sep, val = item.partition("=")
            if not sep:
                raise CliError("INVALID_ARGUMENT", f"direction {item!r} is not of the form col=inc|dec|auto")
            if col not in names:
                raise CliError("UNKNOWN_COLUMN", f"direction given for unknown column {col!r}")
            try:
                dirs[names.index(col)] = normalize_direction(val)
            except ValueError as e:
                raise CliError("INVALID_ARGUMENT", str(e)) from None
    return tuple(dirs)


def parse_grid(spec: Optional[str], d: Dataset, c: LisoConfig) -> np.ndarray:
    """``max:min:count[:log|lin]``; ``max`` may be ``auto`` (the zero-fit level)
    and ``min`` may be ``auto`` (``max / 1000``)."""
    if spec is None:
        try:
            return default_grid(d, c)
        except ValueError as e:
            raise CliError("INVALID_DATA", str(e)) from None
    parts = spec.split(":")
    if len(parts) not in (3, 4):
        raise CliError("INVALID_ARGUMENT", f"grid {spec!r} is not max:min:count[:log|lin]")
    scale = parts[3] if len(parts) == 4 else "log"
    try:
        top = lambda_max(d, c) if parts[0] == "auto" else float(parts[0])
        bottom = top * 1e-3 if parts[1] == "auto" else float(parts[1])
        count = int(parts[2])
    except ValueError:
        raise CliError("INVALID_ARGUMENT", f"grid {spec!r} has a non-numeric field") from None
    if scale not in ("log", "lin"):
        raise CliError("INVALID_ARGUMENT", f"grid scale must be log or lin, got {scale!r}")
    if count < 1 or not (math.isfinite(top) and math.isfinite(bottom)):
        raise CliError("INVALID_ARGUMENT", f"grid {spec!r} is not a finite grid with at least one point")
    if count == 1:
        return np.array([top])
    if not top > bottom >= 0 or (scale == "log" and bottom == 0):
        raise CliError("INVALID_ARGUMENT", "grid needs max > min >= 0 (min > 0 for log spacing)")
    return np.geomspace(top, bottom, count) if scale == "log" else np.linspace(top, bottom, count)


def _config(args, d: Dataset) -> LisoConfig:
    return LisoConfig(directions=parse_directions(args.direction, d.names))


def _write(path: Optional[str], text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as e:
        raise CliError("IO", f"cannot write {path}: {e.strerror}") from None


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _check_lambda(v, flag):
    if v is not None and not (math.isfinite(v) and v >= 0):
        raise CliError("INVALID_ARGUMENT", f"{flag} must be a finite non-negative number")


def cmd_fit(args) -> int:
    d = load_dataset(args.input, args.response)
    c = _config(args, d)
    _check_lambda(args.lam, "--lambda")
    _check_lambda(args.lam2, "--lambda2")
    top = lambda_max(d, c)
    extra = {}
    if args.variant == "plain":
        if args.lam is None:
            rep = cross_validate(d, parse_grid(args.grid, d, c), args.folds, seed=args.seed, config=c)
            lam = rep.lam_min
            extra["selected_by"] = "cv"
        else:
            lam = args.lam
        model = liso_fit(d, c.with_lam(lam))
    else:
        spec = ReweightSpec(scheme=args.variant)
        if (args.lam is None) != (args.lam2 is None):
            raise CliError("INVALID_ARGUMENT", "give both --lambda and --lambda2, or neither for CV")
        if args.lam is None:
            model, lam0, lam1, _, _ = cv_adaptive(d, args.folds, args.seed, c, spec)
            extra["selected_by"] = "cv"
        else:
            lam0, lam1 = args.lam, args.lam2
            model = adaptive_liso(d, lam0, lam1, spec, c)
        extra["lambda0"] = lam0
    model.diagnostics.update(extra)
    model.diagnostics["lambda_max"] = top if math.isfinite(top) else None
    model.diagnostics["variant"] = args.variant
    _write(args.output, model.to_json(indent=2) + "\n")
    return 0


def load_model(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
    except OSError as e:
        raise CliError("IO", f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise CliError("MODEL_INVALID", f"{path}: {e}") from None
    try:
        if blob["components"] and "plus" in blob["components"][0]:
            return SignedModel.from_dict(blob).model
        return AdditiveModel.from_dict(blob)
    except (KeyError, TypeError, ValueError) as e:
        raise CliError("MODEL_INVALID", f"{path}: {e}") from None


def cmd_predict(args) -> int:
    model = load_model(args.model)
    header, table = read_table(args.input)
    cols = []
    for name in model.names:
        if name not in header:
            raise CliError("UNKNOWN_COLUMN", f"model covariate {name!r} not in {args.input}")
        cols.append(header.index(name))
    pred = model.predict(table[:, cols])
    _write(args.output, "prediction\n" + "".join(_fmt(v) + "\n" for v in pred))
    return 0


def cmd_cv(args) -> int:
    d = load_dataset(args.input, args.response)
    c = _config(args, d)
    grid = parse_grid(args.grid, d, c)
    try:
        rep = cross_validate(d, grid, args.folds, seed=args.seed, config=c)
    except ValueError as e:
        raise CliError("INVALID_ARGUMENT", str(e)) from None
    _write(args.output, _dump(rep.to_dict()))
    csv_path = args.csv
    if csv_path is None and args.output not in (None, "-"):
        csv_path = os.path.splitext(args.output)[0] + ".csv"
    if csv_path is not None:
        _write(csv_path, rep.to_csv())
    return 0


def cmd_path(args) -> int:
    d = load_dataset(args.input, args.response)
    c = _config(args, d)
    grid = parse_grid(args.grid, d, c)
    if args.output is None:
        raise CliError("INVALID_ARGUMENT", "path needs --output DIR")
    try:
        os.makedirs(args.output, exist_ok=True)
    except OSError as e:
        raise CliError("IO", f"cannot create {args.output}: {e.strerror}") from None
    try:
        models = liso_path(d, grid, c)
    except ValueError as e:
        raise CliError("INVALID_ARGUMENT", str(e)) from None
    lines = ["index,lambda,n_active,active," + ",".join(f"tv_{n}" for n in d.names)]
    for i, m in enumerate(models):
        _write(os.path.join(args.output, f"model_{i:03d}.json"), m.to_json(indent=2) + "\n")
        active = ";".join(d.names[k] for k in m.active_set())
        tv = ",".join(_fmt(t) for t in m.total_variations())
        lines.append(f"{i},{_fmt(m.lam)},{len(m.active_set())},{active},{tv}")
    _write(os.path.join(args.output, "summary.csv"), "\n".join(lines) + "\n")
    return 0


def cmd_signfit(args) -> int:
    d = load_dataset(args.input, args.response)
    c = LisoConfig(directions=(UNCONSTRAINED,) * d.p)
    _check_lambda(args.lam, "--lambda")
    _check_lambda(args.lam2, "--lambda2")
    if args.lam is None and args.lam2 is not None:
        raise CliError("INVALID_ARGUMENT", "--lambda2 requires --lambda")
    if args.lam is None:
        s, lam0, lam1, _, _ = cv_sign_discovery(d, args.folds, args.seed, c)
    else:
        lam0 = args.lam
        lam1 = args.lam if args.lam2 is None else args.lam2
        s = adaptive_sign_discovery(d, lam0, lam1, c, initial=signed_liso(d, lam0, config=c))
    s.model.diagnostics.update(lambda0=lam0, lambda_max=lambda_max(d, c),
                               directions_found=s.directions_found())
    _write(args.output, _dump(s.to_dict()))
    return 0


def cmd_simulate(args) -> int:
    from .sim import SimScenario, comparison_csv, comparison_study

    try:
        s = SimScenario(args.scenario, args.n, args.p, args.snr, args.correlated, args.seed)
    except ValueError as e:
        raise CliError("INVALID_ARGUMENT", str(e)) from None
    methods = tuple(m.strip() for m in args.methods.split(","))
    bad = [m for m in methods if m not in ("plain", "adaptive", "scad")]
    if bad:
        raise CliError("INVALID_ARGUMENT", f"unknown method(s) {', '.join(bad)}")
    res = comparison_study(s, args.replications, methods)
    _write(args.output, comparison_csv([res]))
    return 0


def _int_list(text, flag):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError("INVALID_ARGUMENT", f"{flag} must be a comma-separated list of integers") from None
    if not vals:
        raise CliError("INVALID_ARGUMENT", f"{flag} is empty")
    return vals


def cmd_recovery(args) -> int:
    from .sim import recovery_study

    p_list = _int_list(args.p_list, "--p-list")
    n_list = _int_list(args.n_list, "--n-list")
    try:
        res = recovery_study(p_list, n_list, args.replications, args.snr, seed=args.seed,
                             n_master=args.n_master, grid_count=args.grid_count)
    except ValueError as e:
        raise CliError("INVALID_ARGUMENT", str(e)) from None
    _write(args.output, res.to_csv())
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("USAGE", message, status=2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="liso", description="Sparse additive monotone regression.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp, lam=True):
        sp.add_argument("--input", required=True, help="CSV with a header row")
        sp.add_argument("--response", required=True, help="response column name")
        sp.add_argument("--direction", action="append", metavar="COL=inc|dec|auto",
                        help="monotone direction per covariate (default inc); repeatable")
        sp.add_argument("--folds", type=int, default=10)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--grid", help="max:min:count[:log|lin], max/min may be 'auto'")
        sp.add_argument("--output", help="output path (stdout if omitted)")
        if lam:
            sp.add_argument("--lambda", dest="lam", type=float)
            sp.add_argument("--lambda2", dest="lam2", type=float, help="stage-two level")

    sp = sub.add_parser("fit", help="fit one model; CV picks lambda if not given")
    data_args(sp)
    sp.add_argument("--variant", choices=("plain", "adaptive", "scad"), default="plain")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("predict", help="predict from a saved model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("cv", help="k-fold cross-validation over a grid")
    data_args(sp, lam=False)
    sp.add_argument("--csv", help="plot CSV path (default: output stem + .csv)")
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("path", help="fit a whole grid, one model file per lambda")
    data_args(sp, lam=False)
    sp.set_defaults(func=cmd_path)

    sp = sub.add_parser("signfit", help="two-stage fit with unknown directions")
    data_args(sp)
    sp.set_defaults(func=cmd_signfit)

    sp = sub.add_parser("simulate", help="validation-tuned comparison study")
    sp.add_argument("--scenario", choices=("all_linear", "mixed_powers", "artificial_4var"),
                    default="mixed_powers")
    sp.add_argument("--n", type=int, default=200)
    sp.add_argument("--p", type=int, default=50)
    sp.add_argument("--snr", type=float, default=7.0)
    sp.add_argument("--correlated", action="store_true")
    sp.add_argument("--replications", type=int, default=10)
    sp.add_argument("--methods", default="plain,adaptive")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("recovery", help="sparsity recovery study")
    sp.add_argument("--p-list", default="32,128")
    sp.add_argument("--n-list", default="20,60,100,140")
    sp.add_argument("--replications", type=int, default=25)
    sp.add_argument("--snr", type=float, default=4.0)
    sp.add_argument("--n-master", type=int, default=1024)
    sp.add_argument("--grid-count", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_recovery)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as e:
        print(f"ERROR {e.code}: {e}", file=sys.stderr)
        return e.status
    except (ValueError, RuntimeError) as e:
        print(f"ERROR FAILED: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
