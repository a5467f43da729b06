"""Command line front end: ``modalreg {gen,fit,predict,benchmark,loocv-grid}``.

Settings are resolved in the order built-in default < ``--config`` INI
file < command-line flag.  The INI file may hold a ``[common]`` section,
one section per command and a ``[hyper]`` section of hyperparameter
overrides (the same keys accepted by ``--set key=value``).  The
environment variable ``MODALREG_OUT_DIR`` only sets the directory used
when ``--out`` is omitted.

Exit codes: 0 success, 2 configuration, 3 data, 4 numerical, 5 I/O.
"""

import os

# single-threaded linear algebra unless the caller asked otherwise, so that
# outputs are reproducible byte for byte
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import configparser  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402

from . import __version__, lsld  # noqa: E402
from .benchmark import METRICS, Row, format_table, run_benchmark  # noqa: E402
from .data import (NOISES, TARGETS, GeneratorSpec, gen_synthetic,  # noqa: E402
                   load_table, mae_to_truth, surrogate_score, train_test_split, write_csv)
from .errors import ConfigError, ModalRegError, StorageError  # noqa: E402
from .io import StandardizedModel, load_model, save_model, write_json  # noqa: E402
from .nn import write_log  # noqa: E402
from .pipeline import ALL_METHODS, FitOptions, fit_method  # noqa: E402

OUT_DIR_ENV = "MODALREG_OUT_DIR"

DEFAULTS = {
    "target": "M1",
    "noise": "gauss",
    "dim": "1",
    "n": "500",
    "n_te": "10000",
    "seed": "0",
    "seeds": "0-9",
    "split": None,
    "metric": None,
    "sigma": None,
    "alpha": None,
    "method": "dmrk",
    "methods": "krr,lad,mrkde,dmrk",
    "targets": "M1",
    "noises": ",".join(NOISES),
    "dims": "1",
    "format": "csv",
    "target_column": "y",
    "workers": "1",
}


# ---------------------------------------------------------------------------
# argument parsing


def _add_source(p, with_seed=True):
    g = p.add_argument_group("data source (a file, or the synthetic generator)")
    g.add_argument("--data", help="CSV or LIBSVM file")
    g.add_argument("--format", choices=("csv", "libsvm"))
    g.add_argument("--target-column", help="target column name (CSV with header) or index")
    g.add_argument("--target", choices=TARGETS)
    g.add_argument("--noise", choices=NOISES)
    g.add_argument("--dim", type=int)
    g.add_argument("--n", type=int)
    if with_seed:
        g.add_argument("--seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="modalreg", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"modalreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [common], [<command>] and [hyper]")
    common.add_argument("--out", help="output path (default: under $%s or ./)" % OUT_DIR_ENV)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic dataset as CSV")
    _add_source(p)
    p.add_argument("--purpose", help="random stream name (default 'train')")

    p = sub.add_parser("fit", parents=[common], help="fit one method and save the model")
    _add_source(p)
    p.add_argument("--method", choices=ALL_METHODS)
    p.add_argument("--split", type=float, help="fit on this training fraction only")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="hyperparameter override (repeatable)")

    p = sub.add_parser("predict", parents=[common], help="predict with a saved model")
    p.add_argument("--model", required=True)
    _add_source(p)
    p.add_argument("--purpose", help="generator stream when no --data is given (default 'test')")
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--sigma", type=float, help="width of the surrogate score")

    p = sub.add_parser("benchmark", parents=[common], help="replicated comparison of methods")
    p.add_argument("--methods", help="comma-separated list from " + ",".join(ALL_METHODS))
    p.add_argument("--targets")
    p.add_argument("--noises")
    p.add_argument("--dims")
    p.add_argument("--data", action="append", help="data file (repeatable); replaces generator rows")
    p.add_argument("--format", choices=("csv", "libsvm"))
    p.add_argument("--target-column")
    p.add_argument("--n", type=int)
    p.add_argument("--n-te", type=int)
    p.add_argument("--seeds", help="e.g. '0-9' or '0,3,5'")
    p.add_argument("--split", type=float)
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--sigma", type=float)
    p.add_argument("--alpha", type=float, help="t-test level (default 0.01 synthetic, 0.05 files)")
    p.add_argument("--workers", type=int)
    p.add_argument("--timing", action="store_true", help="record wall-clock time in the report")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("loocv-grid", parents=[common], help="LOOCV scores of the width grid")
    _add_source(p)
    p.add_argument("--lambda", dest="lam", type=float)
    return parser


class Settings:
    """Merged view of defaults, the INI file and the parsed flags."""

    def __init__(self, args):
        self.args = args
        self.file = {}
        self.hyper = {}
        if getattr(args, "config", None):
            cp = configparser.ConfigParser()
            try:
                with open(args.config, encoding="utf-8") as fh:
                    cp.read_file(fh)
            except OSError as exc:
                raise StorageError(f"cannot read config {args.config}: {exc}") from exc
            except configparser.Error as exc:
                raise ConfigError(f"{args.config}: {exc}") from exc
            for section in ("common", args.command):
                if cp.has_section(section):
                    self.file.update({k.replace("-", "_"): v for k, v in cp.items(section)})
            if cp.has_section("hyper"):
                self.hyper.update(dict(cp.items("hyper")))
        for item in getattr(args, "set", []) or []:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            self.hyper[k.strip()] = v.strip()

    def raw(self, key):
        v = getattr(self.args, key, None)
        if v is not None:
            return v
        if key in self.file:
            return self.file[key]
        return DEFAULTS.get(key)

    def get(self, key, kind=str):
        v = self.raw(key)
        if v is None or not isinstance(v, str):
            return v
        try:
            return kind(v)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {v!r}") from exc

    def options(self, **defaults):
        return FitOptions.from_mapping({**defaults, **self.hyper})

    def echo(self):
        keys = sorted(set(DEFAULTS) | set(self.file) | {k for k, v in vars(self.args).items()
                                                        if v is not None})
        skip = {"config", "set", "command"}
        return {k: self.raw(k) for k in keys if k not in skip and self.raw(k) is not None}


def _list(text, kind=str):
    return [kind(t) for t in str(text).replace(" ", "").split(",") if t]


def parse_seeds(text):
    seeds = []
    for part in _list(text):
        if "-" in part[1:]:
            a, b = part.split("-", 1) if not part.startswith("-") else (part, None)
            try:
                lo, hi = int(a), int(b)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad seed range {part!r}") from exc
            if hi < lo:
                raise ConfigError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            try:
                seeds.append(int(part))
            except ValueError as exc:
                raise ConfigError(f"bad seed {part!r}") from exc
    if not seeds:
        raise ConfigError("at least one seed is required")
    return seeds


def _out_path(s, default_name):
    out = s.raw("out")
    if out:
        return out
    return os.path.join(os.environ.get(OUT_DIR_ENV, "."), default_name)


def _spec(s, purpose_default="train"):
    return GeneratorSpec(s.get("target"), s.get("noise"), s.get("dim", int), s.get("n", int),
                         s.get("seed", int))


def _dataset(s, purpose_default="train"):
    """Dataset from ``--data`` or the generator flags, and its spec if synthetic."""
    path = s.raw("data")
    if path:
        tc = s.get("target_column")
        if isinstance(tc, str) and tc.lstrip("-").isdigit():
            tc = int(tc)
        return load_table(path, s.get("format"), tc), None
    spec = _spec(s)
    purpose = s.raw("purpose") or purpose_default
    return gen_synthetic(spec, purpose), spec


def _stem(path):
    return path[:-5] if path.endswith(".json") else path


# ---------------------------------------------------------------------------
# commands


def cmd_gen(s):
    data, spec = _dataset(s)
    if spec is None:
        raise ConfigError("gen needs generator flags, not --data")
    out = _out_path(s, f"{spec.target}_{spec.noise}_d{spec.d}_n{spec.n}_s{spec.seed}.csv")
    write_csv(data, out)
    return {"written": out, "n": data.n, "d": data.d, "spec": spec.to_dict()}


def cmd_fit(s):
    data, spec = _dataset(s)
    method = s.get("method")
    if method not in ALL_METHODS:
        raise ConfigError(f"unknown method {method!r}")
    seed = s.get("seed", int)
    split = s.get("split", float)
    if split is not None:
        data, _ = train_test_split(data, split, seed)
    opts = s.options()
    model, log = fit_method(method, data, seed, opts)
    out = _out_path(s, f"{method}_model.json")
    log["options"] = opts.to_dict()
    log["source"] = spec.to_dict() if spec else {"path": s.raw("data")}
    log["toolkit_version"] = __version__
    training = log.pop("training", None)
    save_model(model, out, extra={"method": method, "seed": seed})
    log_path = _stem(out) + ".log.json"
    write_json(log, log_path)
    written = [out, log_path]
    if training is not None:
        write_log(training, _stem(out) + ".train.jsonl")
        written.append(_stem(out) + ".train.jsonl")
    summary = {"written": written, "method": method}
    for k in ("sigma_y", "sigma_x", "h_y", "h_x", "lambda_reg"):
        if k in log:
            summary[k] = log[k]
    if "trace" in log:
        summary["iterations"] = log["trace"]["iterations"]
        summary["converged"] = log["trace"]["converged"]
    return summary


def cmd_predict(s):
    model = load_model(s.raw("model"))
    data, spec = _dataset(s, purpose_default="test")
    pred = model.predict(data.X)
    out = _out_path(s, "predictions.csv")
    try:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("prediction\n")
            for v in pred:
                fh.write(repr(float(v)) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write {out}: {exc}") from exc
    result = {"written": out, "n": int(pred.size)}
    metric = s.get("metric")
    if metric == "mae_truth":
        target = spec.target if spec else s.raw("target")
        if target is None:
            raise ConfigError("mae_truth needs --target for file data")
        result["mae_truth"] = mae_to_truth(pred, target, data.X)
    elif metric == "surrogate":
        sigma = s.get("sigma", float)
        if isinstance(model, StandardizedModel):
            # standardised units of the model's own training split
            sc = model.standardizer
            result["surrogate"] = surrogate_score(sc.apply_y(pred), sc.apply_y(data.y), sigma)
        else:
            result["surrogate"] = surrogate_score(pred, data.y, sigma)
        result["sigma"] = sigma if sigma is not None else float(data.n) ** -0.2
    return result


def cmd_benchmark(s):
    paths = s.raw("data")
    if isinstance(paths, str):
        paths = _list(paths)
    if paths:
        tc = s.get("target_column")
        rows = [Row(path=p, fmt=s.get("format"), target_column=tc) for p in paths]
    else:
        rows = [Row(t, nz, d) for t in _list(s.get("targets"))
                for nz in _list(s.get("noises")) for d in _list(s.get("dims"), int)]
    methods = _list(s.get("methods"))
    for m in methods:
        if m not in ALL_METHODS:
            raise ConfigError(f"unknown method {m!r}")
    split = s.get("split", float)
    report = run_benchmark(
        rows, methods, parse_seeds(s.get("seeds")), n=s.get("n", int), n_te=s.get("n_te", int),
        split=0.8 if split is None else split, metric=s.get("metric"),
        sigma=s.get("sigma", float), alpha=s.get("alpha", float),
        options=s.options(trace_dhat=False), workers=s.get("workers", int),
        timing=bool(s.raw("timing")),
    )
    report["config"]["settings"] = s.echo()
    out = _out_path(s, "benchmark.json")
    write_json(report, out)
    table = format_table(report)
    table_path = _stem(out) + ".txt"
    try:
        with open(table_path, "w", encoding="utf-8") as fh:
            fh.write(table)
    except OSError as exc:
        raise StorageError(f"cannot write {table_path}: {exc}") from exc
    sys.stdout.write(table)
    return {"written": [out, table_path]}


def cmd_loocv_grid(s):
    data, spec = _dataset(s)
    grid = lsld.default_grid(data)
    lam = s.get("lam", float)
    grid.lam = lam
    params, model = lsld.select_model(data, grid)
    rows = [{"sigma_y": sy, "sigma_x": sx, "loocv": v} for (sy, sx), v in sorted(grid.cells.items())]
    report = {"lambda": model.lam, "selected": {"sigma_y": params.sigma_y, "sigma_x": params.sigma_x},
              "cells": rows, "source": spec.to_dict() if spec else {"path": s.raw("data")}}
    out = _out_path(s, "loocv_grid.json")
    write_json(report, out)
    return {"written": out, "selected": report["selected"]}


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "predict": cmd_predict,
            "benchmark": cmd_benchmark, "loocv-grid": cmd_loocv_grid}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        s = Settings(args)
        result = COMMANDS[args.command](s)
    except ModalRegError as exc:
        print(f"modalreg {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    if args.command != "benchmark":
        print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
