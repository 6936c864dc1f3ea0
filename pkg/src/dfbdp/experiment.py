"""Run a configured experiment and write its CSV artifacts."""

from __future__ import annotations

import csv
import json
import os
import time

import numpy as np

from .benchmarks import NAMES
from .errors import DfbdpError
from .forward import make_stream, simulate_batch
from .metrics import (
    SUMMARY_HEADER,
    repeated_runs,
    summary_row,
    write_runs_csv,
    write_summary_csv,
)
from .network import save_json
from .solver import EVAL_STREAM

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
CURVE_TIMES = (0.0, 0.33, 0.66, 0.96)
CURVE_POINTS = 200
_EVAL_PATH = 4


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _f(v):
    return repr(float(v))


def write_loss_traces(path, result):
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["run", "step", "iteration", "loss"])
        for r, sol in enumerate(result.solutions):
            for i, trace in enumerate(sol.traces):
                for it, loss in enumerate(trace):
                    w.writerow([r, i, it, _f(loss)])


def curve_index(grid, t):
    return int(np.argmin(np.abs(grid.t[:-1] - t)))


def write_curves(out_dir, solution):
    """``u_curve_t<t>.csv`` files over x in [0, pi] for one-dimensional problems."""
    problem, grid = solution.problem, solution.grid
    xs = np.linspace(0.0, np.pi, CURVE_POINTS)[:, None]
    written = []
    for t in CURVE_TIMES:
        i = curve_index(grid, t)
        ti = grid.t[i]
        u_pred = solution.value(i, xs)
        du_pred = solution.grad_u(i, xs)[:, 0]
        if problem.exact is not None:
            u_ex = problem.exact.u(ti, xs)
            du_ex = problem.exact.grad_u(ti, xs)[:, 0]
        else:
            u_ex = du_ex = [None] * len(xs)
        path = os.path.join(out_dir, f"u_curve_t{t:g}.csv")
        with open(path, "w", newline="") as fh:
            w = _writer(fh)
            w.writerow(["x", "u_exact", "u_pred", "dxu_exact", "dxu_pred"])
            for row in zip(xs[:, 0], u_ex, u_pred, du_ex, du_pred):
                w.writerow(["" if v is None else _f(v) for v in row])
        written.append(path)
    return written


def write_path(path, solution, seed):
    """One simulated trajectory with exact and predicted Y and jump flags."""
    problem, grid = solution.problem, solution.grid
    batch = simulate_batch(problem, grid, 1, make_stream(seed, EVAL_STREAM, _EVAL_PATH))
    x = batch.x[0]
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["t", "y_exact", "y_pred", "jump_flag"])
        for i, t in enumerate(grid.t):
            xi = x[i][None]
            y_ex = "" if problem.exact is None else _f(problem.exact.u(t, xi)[0])
            flag = int(batch.counts[0, i - 1] > 0) if i > 0 else 0
            w.writerow([_f(t), y_ex, _f(solution.value(i, xi)[0]), flag])


def write_checkpoints(out_dir, result):
    ck = os.path.join(out_dir, "checkpoints")
    os.makedirs(ck, exist_ok=True)
    for r, sol in enumerate(result.solutions):
        for est in sol.estimators:
            save_json(os.path.join(ck, f"run{r}_step{est.i}.json"),
                      {"u_net": est.u_net, "kernel_net": est.kernel_net})


def _write_diagnostics(out_dir, exc):
    path = os.path.join(out_dir, "diagnostics.json")
    ctx = {k: (v if isinstance(v, (int, float, str, list)) else repr(v))
           for k, v in getattr(exc, "context", {}).items()}
    with open(path, "w") as fh:
        json.dump({"error": type(exc).__name__, "message": str(exc), "context": ctx}, fh,
                  indent=2)
    return path


def run_experiment(config, workers=1, log=print):
    """Execute ``config``; returns ``(exit_status, result_or_None)``."""
    try:
        os.makedirs(config.out_dir, exist_ok=True)
    except OSError as exc:
        log(f"error: cannot create output directory {config.out_dir}: {exc.strerror}")
        return EXIT_CONFIG, None
    problem, grid = config.problem(), config.grid()
    start = time.perf_counter()
    try:
        result = repeated_runs(problem, grid, config.train, config.runs, workers=workers,
                               keep_solutions=True)
    except DfbdpError as exc:
        path = _write_diagnostics(config.out_dir, exc)
        log(f"error: {exc} (diagnostics in {path})")
        return EXIT_NUMERIC, None
    wall = time.perf_counter() - start
    d, out = problem.dim, config.out_dir
    try:
        if config.summary:
            row = summary_row(config.benchmark, d, grid.n, config.train.batch, result,
                              wall if config.timing else None)
            write_summary_csv(os.path.join(out, "summary.csv"), [row])
            write_runs_csv(os.path.join(out, "runs.csv"), config.benchmark, d, result,
                           timing=config.timing)
        if config.loss_traces:
            write_loss_traces(os.path.join(out, "losses.csv"), result)
        if config.curves and d == 1:
            write_curves(out, result.solutions[0])
        if config.paths:
            write_path(os.path.join(out, "path.csv"), result.solutions[0],
                       result.reports[0].seed)
        if config.checkpoints:
            write_checkpoints(out, result)
    except OSError as exc:
        log(f"error: cannot write {exc.filename}: {exc.strerror}")
        return EXIT_CONFIG, result
    return EXIT_OK, result


def _order(row):
    name = row[0]
    return (NAMES.index(name) if name in NAMES else len(NAMES), name, row[1] or 0)


_WIDTHS = (16, 4, 5, 6, 5, 12, 12, 10, 12)


def _cell(v, width):
    if v is None or v == "":
        return " " * width
    if isinstance(v, (float, np.floating)):
        return f"{float(v):>{width}.6f}"
    return f"{v!s:>{width}}"


def print_summary(rows, file=None):
    """Fixed-width table of summary rows, benchmarks in canonical order.

    Rows follow the summary CSV columns.  Returns the table text and also
    prints it when ``file`` is given.
    """
    lines = ["".join(f"{h:>{w}}" if k else f"{h:<{w}}" for k, (h, w)
                     in enumerate(zip(SUMMARY_HEADER, _WIDTHS)))]
    for row in sorted(rows, key=_order):
        cells = [f"{row[0]:<{_WIDTHS[0]}}"] + [_cell(v, w) for v, w in zip(row[1:], _WIDTHS[1:])]
        lines.append("".join(cells))
    text = "\n".join(lines)
    if file is not None:
        print(text, file=file)
    return text
