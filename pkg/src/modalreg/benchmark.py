"""Replicated comparisons of fitting methods, with paired t-test marking.

A benchmark is a list of *rows* (one synthetic setting or one data file)
times a list of methods times a list of seeds.  Every (row, seed) job is
independent, draws from its own random streams and may run in a separate
process; results are assembled in a fixed order so the report does not
depend on the number of workers.
"""

import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import __version__
from .data import (GeneratorSpec, Standardizer, gen_synthetic, load_table, mae_to_truth,
                   surrogate_score, train_test_split)
from .errors import ConfigError, ModalRegError
from .pipeline import FitOptions, fit_method

METRICS = ("mae_truth", "surrogate")


@dataclass(frozen=True)
class Row:
    """A synthetic setting ``(target, noise, d)`` or a data file."""

    target: str = None
    noise: str = None
    d: int = None
    path: str = None
    fmt: str = "csv"
    target_column: str = "y"

    @property
    def synthetic(self):
        return self.path is None

    def label(self):
        if self.synthetic:
            return f"{self.target}/{self.noise}/d={self.d}"
        return self.path

    def to_dict(self):
        if self.synthetic:
            return {"target": self.target, "noise": self.noise, "d": self.d}
        return {"path": self.path, "format": self.fmt, "target_column": self.target_column}


def _load_row(row):
    return load_table(row.path, row.fmt, row.target_column)


def run_job(row, seed, methods, n, n_te, split, metric, sigma, options, full=None):
    """Fit every method on one replication; returns ``{method: value or error}``."""
    if row.synthetic:
        spec = GeneratorSpec(row.target, row.noise, row.d, n, seed)
        train = gen_synthetic(spec, "train")
        test = gen_synthetic(GeneratorSpec(row.target, row.noise, row.d, n_te, seed), "test")
    else:
        full = full if full is not None else _load_row(row)
        train, test = train_test_split(full, split, seed)
    scaler = None if metric == "mae_truth" else Standardizer.fit(train)
    cache = {}
    out = {}
    for method in methods:
        try:
            model, _ = fit_method(method, train, seed, options, cache)
            if metric == "mae_truth":
                value = mae_to_truth(model.predict(test.X), row.target, test.X)
            else:
                # scored in the standardised output units of the training split
                pred = scaler.apply_y(model.predict(test.X))
                value = surrogate_score(pred, scaler.apply_y(test.y), sigma)
            out[method] = {"value": float(value)}
        except ModalRegError as exc:
            out[method] = {"error": f"{type(exc).__name__}: {exc}"}
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            out[method] = {"error": f"{type(exc).__name__}: {exc}",
                           "traceback": traceback.format_exc(limit=3)}
    return out


def _job_star(args):
    return run_job(*args)


def mean_sd(values):
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return None, None
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return float(v.mean()), sd


def comparable(a, b, alpha):
    """True when the paired t-test cannot separate ``a`` and ``b`` at ``alpha``.

    Identical vectors are comparable; so is any pair with fewer than two
    observations and equal means.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a - b
    if diff.size == 0:
        return False
    if np.all(diff == 0):
        return True
    if diff.size < 2:
        return False
    if np.ptp(diff) <= 1e-12 * np.max(np.abs(diff)):
        # (numerically) zero variance of a nonzero difference: perfectly separated
        return False
    p = stats.ttest_rel(a, b).pvalue
    return bool(np.isfinite(p) and p >= alpha)


def mark_best(cells, larger_is_better, alpha):
    """Set ``cell["best"]`` for the best method and those comparable to it.

    Comparisons use the seeds on which both methods produced a value.
    """
    ok = [c for c in cells if c["values"]]
    for c in cells:
        c["best"] = False
    if not ok:
        return
    key = (lambda c: -c["mean"]) if larger_is_better else (lambda c: c["mean"])
    top = min(ok, key=key)
    top_map = dict(zip(top["seeds_ok"], top["values"]))
    for c in ok:
        if c is top:
            c["best"] = True
            continue
        common = [s for s in c["seeds_ok"] if s in top_map]
        mine = dict(zip(c["seeds_ok"], c["values"]))
        c["best"] = comparable([mine[s] for s in common], [top_map[s] for s in common], alpha)


def run_benchmark(rows, methods, seeds, n=500, n_te=10000, split=0.8, metric=None,
                  sigma=None, alpha=None, options=None, workers=1, timing=False):
    """Run every (row, seed) job and assemble a JSON-ready report."""
    if not rows or not methods or not seeds:
        raise ConfigError("benchmark needs at least one row, one method and one seed")
    synthetic = all(r.synthetic for r in rows)
    if metric is None:
        metric = "mae_truth" if synthetic else "surrogate"
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}")
    if metric == "mae_truth" and not synthetic:
        raise ConfigError("mae_truth needs a synthetic generator (the truth is unknown for files)")
    if alpha is None:
        alpha = 0.01 if synthetic else 0.05
    if not 0.0 < split < 1.0:
        raise ConfigError("split fraction must lie in (0, 1)")
    options = options or FitOptions(trace_dhat=False)
    jobs = [(row, seed) for row in rows for seed in seeds]
    loaded = {r: _load_row(r) for r in rows if not r.synthetic}
    args = [(row, seed, tuple(methods), n, n_te, split, metric, sigma, options, loaded.get(row))
            for row, seed in jobs]
    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job_star, args))
    else:
        results = [_job_star(a) for a in args]
    elapsed = time.perf_counter() - t0

    by_row = {}
    for (row, seed), res in zip(jobs, results):
        by_row.setdefault(row, []).append((seed, res))
    report_rows = []
    for row in rows:
        cells = []
        for method in methods:
            seeds_ok, values, failures = [], [], []
            for seed, res in by_row[row]:
                r = res[method]
                if "value" in r:
                    seeds_ok.append(int(seed))
                    values.append(r["value"])
                else:
                    failures.append({"seed": int(seed), "error": r["error"]})
            mean, sd = mean_sd(values)
            cells.append({"method": method, "seeds_ok": seeds_ok, "values": values,
                          "mean": mean, "sd": sd, "failures": failures})
        mark_best(cells, metric == "surrogate", alpha)
        report_rows.append({"row": row.to_dict(), "label": row.label(), "cells": cells})
    report = {
        "toolkit": {"name": "modalreg", "version": __version__},
        "config": {"methods": list(methods), "seeds": [int(s) for s in seeds], "n": n,
                   "n_te": n_te, "split": split, "metric": metric, "sigma": sigma,
                   "alpha": alpha, "options": options.to_dict()},
        "rows": report_rows,
    }
    if timing:
        report["wall_clock_seconds"] = elapsed
    return report


def _fmt(mean, sd, digits):
    if mean is None:
        return "failed"
    return f"{mean:.{digits}f}({sd:.{digits}f})"


def format_table(report, digits=3):
    """Plain-text table: one line per row, one column per method.

    Entries are ``mean(sd)``; a trailing ``*`` marks the best method and
    those the paired t-test cannot separate from it.
    """
    methods = report["config"]["methods"]
    label_w = max([len("setting")] + [len(r["label"]) for r in report["rows"]])
    entries = []
    for r in report["rows"]:
        line = []
        for c in r["cells"]:
            s = _fmt(c["mean"], c["sd"], digits) + ("*" if c["best"] else " ")
            if c["failures"]:
                s += f" [{len(c['failures'])} failed]"
            line.append(s)
        entries.append(line)
    col_w = [max([len(m)] + [len(e[j]) for e in entries]) for j, m in enumerate(methods)]
    head = "setting".ljust(label_w) + " | " + " | ".join(m.ljust(w) for m, w in zip(methods, col_w))
    out = [head, "-" * len(head)]
    for r, e in zip(report["rows"], entries):
        out.append(r["label"].ljust(label_w) + " | "
                   + " | ".join(s.ljust(w) for s, w in zip(e, col_w)))
    cfg = report["config"]
    better = "larger" if cfg["metric"] == "surrogate" else "smaller"
    out.append("")
    out.append(f"metric: {cfg['metric']} ({better} is better); {len(cfg['seeds'])} seeds; "
               f"* = best or not separated by a paired t-test at level {cfg['alpha']:g}")
    return "\n".join(out) + "\n"
