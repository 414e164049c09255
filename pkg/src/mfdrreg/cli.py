"""Command-line interface: ``mfdrreg {fit,mfdr,cv,compare,simulate}``.

Settings resolve as command-line flags, then ``MFDR_<NAME>`` environment
variables, then a JSON ``--config`` file, then built-in defaults.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import warnings
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .comparators import sample_split, univariate_screen
from .data import DataError, read_csv
from .family import DegenerateLikelihood
from .mfdr import mfdr_path
from .penalty import PenaltySpec
from .selection import cross_validate, select_index_by_mfdr
from .simulate import PRESETS, new_seed, parse_scenario, run_scenario
from .solver import ConvergenceError, SolverControls, fit_path, make_lambda_grid

log = logging.getLogger("mfdrreg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
ENV_PREFIX = "MFDR_"

DEFAULTS = {
    "family": "gaussian",
    "penalty": None,  # lasso, unless a simulation scenario says otherwise
    "gamma": None,
    "lambda2": 0.0,
    "nlambda": 100,
    "lambda_min_ratio": None,
    "unpenalized": "",
    "status": None,
    "y": None,
    "max_active": None,
    "full_w": False,
    "seed": None,
    "threads": None,
    "out": None,
    "folds": 10,
    "rule": "min",
    "alpha": 0.1,
    "q": 0.1,
    "scenario": None,
    "reps": None,
    "log_level": "WARNING",
}

# settings that do not change results and stay out of the config hash
_UNHASHED = {"threads", "out", "log_level", "config"}


class UsageError(Exception):
    def __init__(self, message, command=None):
        super().__init__(message)
        self.command = command  # subcommand whose usage should accompany the message


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _unit_interval(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1), got {value}")
    return value


def _nonnegative(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {value}")
    return value


def _seed(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be nonnegative")
    return value


_TYPES = {
    "gamma": float, "lambda2": _nonnegative, "nlambda": _positive_int,
    "lambda_min_ratio": _unit_interval, "max_active": _positive_int, "seed": _seed,
    "threads": _positive_int, "folds": _positive_int, "alpha": _unit_interval, "q": _unit_interval,
    "reps": _positive_int,
}
_CHOICES = {
    "family": ("gaussian", "binomial", "cox"),
    "penalty": ("lasso", "mcp", "scad", "enet"),
    "rule": ("min", "1se", "mfdr"),
    "log_level": ("DEBUG", "INFO", "WARNING", "ERROR"),
}


def build_parser():
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON file of default settings")
    common.add_argument("--seed", type=_seed, help="random seed (default: fresh entropy, recorded)")
    common.add_argument("--threads", type=_positive_int, help="worker threads (default: all cores)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--log-level", dest="log_level", choices=_CHOICES["log_level"])

    model = argparse.ArgumentParser(add_help=False, argument_default=S)
    model.add_argument("data", help="CSV file with a header row")
    model.add_argument("--y", help="response column (survival time for cox)")
    model.add_argument("--status", help="event indicator column (cox)")
    model.add_argument("--family", choices=_CHOICES["family"])
    model.add_argument("--penalty", choices=_CHOICES["penalty"])
    model.add_argument("--gamma", type=float, help="MCP/SCAD concavity")
    model.add_argument("--lambda2", type=_nonnegative, help="elastic-net ridge weight")
    model.add_argument("--nlambda", type=_positive_int)
    model.add_argument("--lambda-min-ratio", dest="lambda_min_ratio", type=_unit_interval)
    model.add_argument("--unpenalized", help="comma-separated columns kept out of the penalty")
    model.add_argument("--max-active", dest="max_active", type=_positive_int,
                       help="stop the path once more features are active")
    model.add_argument("--full-w", dest="full_w", action="store_true",
                       help="cox: use the full weight matrix for v_hat")

    parser = _Parser(prog="mfdrreg", description="Penalized regression with marginal FDR control.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    parser.commands = sub.choices

    sub.add_parser("fit", parents=[common, model], help="fit a regularization path (JSON out)",
                   argument_default=S)
    p = sub.add_parser("mfdr", parents=[common, model], help="mFDR table along the path (CSV out)",
                       argument_default=S)
    p.add_argument("--alpha", type=_unit_interval, help="mFDR level for the selection rule")
    p = sub.add_parser("cv", parents=[common, model], help="cross-validation table (CSV out)",
                       argument_default=S)
    p.add_argument("--folds", type=_positive_int)
    p.add_argument("--rule", choices=_CHOICES["rule"])
    p.add_argument("--alpha", type=_unit_interval)
    p = sub.add_parser("compare", parents=[common, model], help="mFDR vs univariate vs sample splitting",
                       argument_default=S)
    p.add_argument("--alpha", type=_unit_interval, help="mFDR level")
    p.add_argument("--q", type=_unit_interval, help="BH level for the comparators")
    p = sub.add_parser("simulate", parents=[common], help="run a simulation scenario (CSV out)",
                       argument_default=S)
    p.add_argument("--scenario", help=f"preset ({', '.join(PRESETS)}) or scenario file")
    p.add_argument("--reps", type=_positive_int, help="replications")
    p.add_argument("--penalty", choices=_CHOICES["penalty"])
    return parser


def _coerce(key, value, origin):
    if value is None:
        return None
    try:
        if key == "full_w":
            if isinstance(value, bool):
                return value
            return str(value).strip().lower() in ("1", "true", "yes", "on")
        if key in _TYPES:
            return _TYPES[key](str(value))
        if key in _CHOICES and value not in _CHOICES[key]:
            raise argparse.ArgumentTypeError(f"expected one of {_CHOICES[key]}, got {value!r}")
    except argparse.ArgumentTypeError as exc:
        raise UsageError(f"{origin} {key}: {exc}") from None
    return value


def resolve_config(args, environ=None):
    """Merge defaults, config file, environment and flags (later wins)."""
    environ = os.environ if environ is None else environ
    explicit = vars(args).copy()
    command = explicit.pop("command")
    cfg = dict(DEFAULTS)
    path = explicit.pop("config", None) or environ.get(ENV_PREFIX + "CONFIG")
    if path:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        for key, value in loaded.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"config {path}: unknown setting {key!r}")
            cfg[key] = _coerce(key, value, "config")
    for key in DEFAULTS:
        env = environ.get(ENV_PREFIX + key.upper())
        if env is not None and env != "":
            cfg[key] = _coerce(key, env, "environment")
    cfg.update(explicit)
    cfg["command"] = command
    cfg["config"] = path
    return cfg


def config_hash(cfg):
    keep = {k: v for k, v in sorted(cfg.items()) if k not in _UNHASHED}
    return hashlib.sha256(json.dumps(keep, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _timestamp():
    # SOURCE_DATE_EPOCH pins the stamp for reproducible builds of the output
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.isoformat(timespec="seconds")


def metadata(cfg):
    return {
        "version": __version__,
        "command": cfg["command"],
        "seed": cfg["seed"],
        "config_hash": config_hash(cfg),
        "timestamp": _timestamp(),
    }


# ------------------------------------------------------------------ #
# Output
# ------------------------------------------------------------------ #


def _fmt(value):
    if value is None:
        return "NA"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return "NA"
        return repr(float(value))
    return str(value)


def render_csv(meta, header, rows, extra=()):
    """CSV text preceded by ``# key: value`` metadata lines."""
    buf = io.StringIO()
    for key, value in list(meta.items()) + list(extra):
        buf.write(f"# {key}: {_fmt(value)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_output(text, out):
    """Write ``text`` to ``out`` atomically (temp file + rename), or to stdout."""
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(out))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require(cfg, *keys):
    for key in keys:
        if cfg.get(key) in (None, ""):
            raise UsageError(f"mfdrreg {cfg['command']}: --{key.replace('_', '-')} is required",
                             cfg["command"])


# ------------------------------------------------------------------ #
# Commands
# ------------------------------------------------------------------ #


def _load(cfg):
    _require(cfg, "y")
    if cfg["family"] == "cox":
        _require(cfg, "status")
    unpen = [c.strip() for c in (cfg["unpenalized"] or "").split(",") if c.strip()]
    return read_csv(cfg["data"], cfg["y"], cfg["family"], cfg["status"], unpen)


def _spec(cfg):
    try:
        return PenaltySpec(cfg["penalty"] or "lasso", lambda2=cfg["lambda2"] or 0.0, gamma=cfg["gamma"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _controls(cfg):
    return SolverControls(max_active=cfg["max_active"], cox_full_w=bool(cfg["full_w"]))


def _path(cfg, ds):
    spec = _spec(cfg)
    grid = make_lambda_grid(ds, spec, cfg["nlambda"], cfg["lambda_min_ratio"])
    return spec, grid, fit_path(ds, spec, grid, _controls(cfg))


def cmd_fit(cfg):
    ds = _load(cfg)
    spec, grid, path = _path(cfg, ds)
    beta_raw, intercept = path.coefficients_raw(ds.record)
    doc = {
        "metadata": metadata(cfg),
        "family": path.family,
        "penalty": {"family": spec.family, "gamma": None if np.isinf(spec.gamma) else spec.gamma,
                    "lambda2": spec.lambda2},
        "n": ds.n,
        "features": list(ds.feature_names),
        "penalized": [bool(b) for b in ds.penalized],
        "lambda_max": path.lambda_max,
        "lambda": path.lambdas.tolist(),
        "intercept": intercept.tolist(),
        "coefficients": beta_raw.tolist(),
        "active_count": path.selected_count.tolist(),
        "kkt_certificate": path.kkt.tolist(),
        "iterations": path.iterations.tolist(),
        "warnings": list(path.warnings),
    }
    write_output(json.dumps(doc, indent=2) + "\n", cfg["out"])


def _mfdr_rows(table, cv=None):
    rows = []
    for k, (lam, ef, s, m) in enumerate(table.rows()):
        row = [lam, ef, s, m]
        if cv is not None:
            row += [cv.cv_error[k], cv.cv_se[k]]
        rows.append(row)
    return rows


def cmd_mfdr(cfg):
    ds = _load(cfg)
    _, _, path = _path(cfg, ds)
    table = mfdr_path(path)
    k = select_index_by_mfdr(table, cfg["alpha"])
    if k is None:
        log.warning("no lambda on the path has mFDR <= %g", cfg["alpha"])
        chosen = [("alpha", cfg["alpha"]), ("selected_lambda", None), ("selected_features", "")]
    else:
        names = [ds.feature_names[j] for j in path.active_set(k)]
        chosen = [("alpha", cfg["alpha"]), ("selected_lambda", table.lambdas[k]),
                  ("selected_features", " ".join(names))]
    text = render_csv(metadata(cfg), ["lambda", "EF", "S", "mFDR"], _mfdr_rows(table), chosen)
    write_output(text, cfg["out"])


def cmd_cv(cfg):
    ds = _load(cfg)
    spec = _spec(cfg)
    grid = make_lambda_grid(ds, spec, cfg["nlambda"], cfg["lambda_min_ratio"])
    controls = _controls(cfg)
    path = fit_path(ds, spec, grid, controls)
    cv = cross_validate(ds, spec, path.lambdas, cfg["folds"], cfg["seed"], controls, cfg["threads"])
    table = mfdr_path(path)
    rule = cfg["rule"]
    if rule == "min":
        k = cv.min_index
    elif rule == "1se":
        k = cv.one_se_index
    else:
        k = select_index_by_mfdr(table, cfg["alpha"])
    extra = [("rule", rule)]
    if k is None:
        log.warning("no lambda on the path has mFDR <= %g", cfg["alpha"])
        extra += [("selected_lambda", None), ("selected_features", "")]
    else:
        names = [ds.feature_names[j] for j in path.active_set(k)]
        extra += [("selected_lambda", path.lambdas[k]), ("selected_features", " ".join(names))]
    text = render_csv(metadata(cfg), ["lambda", "EF", "S", "mFDR", "CVE", "CVSE"],
                      _mfdr_rows(table, cv), extra)
    write_output(text, cfg["out"])


def cmd_compare(cfg):
    ds = _load(cfg)
    _, _, path = _path(cfg, ds)
    table = mfdr_path(path)
    k = select_index_by_mfdr(table, cfg["alpha"])
    rows = []
    if k is not None:
        for j in path.active_set(k):
            rows.append(["mfdr", ds.feature_names[j], path.beta[k, j], None, None])
    for res in univariate_screen(ds, cfg["q"]):
        if res.adjusted_discovery:
            rows.append(["univariate", ds.feature_names[res.feature], None, res.statistic, res.p_value])
    for res in sample_split(ds, cfg["q"], seed=cfg["seed"]):
        if res.adjusted_discovery:
            rows.append(["sample_split", ds.feature_names[res.feature], None, res.statistic, res.p_value])
    counts = {m: sum(r[0] == m for r in rows) for m in ("mfdr", "univariate", "sample_split")}
    extra = [("alpha", cfg["alpha"]), ("q", cfg["q"]),
             ("mfdr_lambda", None if k is None else table.lambdas[k])]
    extra += [(f"{m}_selected", c) for m, c in counts.items()]
    text = render_csv(metadata(cfg), ["method", "feature", "coefficient", "wald_z", "p_value"], rows, extra)
    write_output(text, cfg["out"])


def _scenario(cfg):
    _require(cfg, "scenario")
    name = cfg["scenario"]
    if name in PRESETS:
        scn = PRESETS[name]()
    elif os.path.isfile(name):
        with open(name) as fh:
            try:
                scn = parse_scenario(fh.read(), os.path.splitext(os.path.basename(name))[0])
            except ValueError as exc:
                raise DataError(f"{name}: {exc}") from None
    else:
        raise UsageError(f"unknown scenario {name!r}; presets: {', '.join(PRESETS)}")
    changes = {"seed": cfg["seed"]}
    if cfg["reps"] is not None:
        changes["replications"] = cfg["reps"]
    if cfg["penalty"] is not None:
        changes["penalty"] = cfg["penalty"]
    return replace(scn, **changes)


def cmd_simulate(cfg):
    scn = _scenario(cfg)
    res = run_scenario(scn, threads=cfg["threads"])
    meta = metadata(cfg)
    meta["scenario"] = scn.name
    summary = render_csv(meta, ["key", "value"], res.summary_rows())
    lam_rows = res.lambda_rows()
    out = cfg["out"]
    if out is None or out == "-":
        sys.stdout.write(summary)
        if lam_rows:
            sys.stdout.write("\n")
            sys.stdout.write(_lambda_csv(meta, lam_rows))
        return
    base = out[:-4] if out.endswith(".csv") else out
    outputs = [(f"{base}.summary.csv", summary)]
    if lam_rows:
        outputs.append((f"{base}.lambda.csv", _lambda_csv(meta, lam_rows)))
    for path, text in outputs:
        write_output(text, path)


def _lambda_csv(meta, rows):
    header = list(rows[0].keys())
    return render_csv(meta, [h.rstrip("_") for h in header], [[r[h] for h in header] for r in rows])


COMMANDS = {"fit": cmd_fit, "mfdr": cmd_mfdr, "cv": cmd_cv, "compare": cmd_compare, "simulate": cmd_simulate}


def run(argv=None, environ=None):
    """Execute the command line ``argv``; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args, environ)
        logging.basicConfig(level=cfg["log_level"], format="%(levelname)s %(name)s: %(message)s")
        if cfg["seed"] is None:
            cfg["seed"] = new_seed()
            log.warning("no --seed given; using entropy seed %d", cfg["seed"])
        if cfg["threads"] is None:
            cfg["threads"] = os.cpu_count() or 1
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[cfg["command"]](cfg)
    except UsageError as exc:
        if exc.command is not None:
            print(parser.commands[exc.command].format_usage(), end="", file=sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"mfdrreg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"mfdrreg: numerical failure at lambda index {exc.lambda_index} "
              f"(residual {exc.residual:.3g}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DegenerateLikelihood, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"mfdrreg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"mfdrreg: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
