"""Error measures, repeated-run statistics and regularity probes.

All Monte-Carlo estimators draw from the evaluation stream of their seed so
they never share randomness with training batches.
"""

from __future__ import annotations

import csv
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DfbdpError, InvalidArgument, NumericFailure, UnsupportedProblem
from .forward import make_stream, propagate, simulate_batch
from .solver import EVAL_STREAM, StepSolution, one_step_values, solve

RUN_STREAM = 3
# sub-branches of the evaluation stream
_EVAL_SCHEME, _EVAL_PROBE, _EVAL_RESIDUAL, _EVAL_STRONG = 0, 1, 2, 3


def relative_l1(estimate, exact):
    if exact == 0:
        raise InvalidArgument("relative error undefined for exact value 0")
    return abs(estimate - exact) / abs(exact)


def run_seed(master, r):
    """Seed of run ``r`` under ``master``; independent of the worker count."""
    seq = np.random.SeedSequence(int(master), spawn_key=(RUN_STREAM, int(r)))
    return int(seq.generate_state(1, np.uint32)[0])


@dataclass
class RunReport:
    run: int
    seed: int
    y0: float
    exact: Optional[float]
    rel_l1: Optional[float]
    final_losses: list
    wall_time: float

    def __post_init__(self):
        if self.exact is not None and self.rel_l1 is None:
            self.rel_l1 = relative_l1(self.y0, self.exact)


@dataclass
class RepeatedRuns:
    mean: float
    stddev: float
    reports: list
    exact: Optional[float] = None
    solutions: list = field(default_factory=list)

    @property
    def rel_l1(self):
        return None if self.exact is None else relative_l1(self.mean, self.exact)


def exact_y0(problem):
    if problem.exact is None:
        return None
    return float(problem.exact.u(0.0, problem.x0[None])[0])


# forked workers read the job from here; closures in ProblemSpec do not pickle
_JOB = {}


def _one_run(r):
    problem, grid, config, master = _JOB["args"]
    seed = run_seed(master, r)
    start = time.perf_counter()
    try:
        sol = solve(problem, grid, config, seed=seed)
    except DfbdpError as exc:
        ctx = dict(getattr(exc, "context", {}))
        ctx.update(run=r, seed=seed)
        raise NumericFailure(f"run {r} (seed {seed}): {exc}", **ctx) from exc
    elapsed = time.perf_counter() - start
    exact = exact_y0(problem)
    report = RunReport(r, seed, sol.y0(), exact, None, list(sol.final_losses), elapsed)
    return report, sol.estimators, sol.traces


def repeated_runs(problem, grid, config, runs, workers=1, keep_solutions=False):
    """``runs`` independent solves with derived seeds; mean/stddev of the y0 estimate.

    ``stddev`` is the population value (ddof=0).  With ``workers > 1`` runs
    are farmed out to forked processes and merged in run order.
    """
    if runs < 1:
        raise InvalidArgument("need at least one run")
    _JOB["args"] = (problem, grid, config, config.seed)
    try:
        if workers <= 1 or runs == 1:
            results = [_one_run(r) for r in range(runs)]
        else:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=min(workers, runs), mp_context=ctx) as pool:
                results = list(pool.map(_one_run, range(runs)))
    finally:
        _JOB.clear()
    reports = [res[0] for res in results]
    ys = np.array([rep.y0 for rep in reports])
    out = RepeatedRuns(float(ys.mean()), float(ys.std()), reports, exact_y0(problem))
    if keep_solutions:
        out.solutions = [StepSolution(problem, grid, est, config, rep.final_losses, tr)
                         for rep, (_, est, tr) in zip(reports, results)]
    return out


class ExactEstimator:
    """Closed-form fields exposed through the StepSolution evaluation interface."""

    def __init__(self, problem, grid):
        _require_exact(problem)
        self.problem, self.grid = problem, grid

    def value(self, i, x):
        return self.problem.exact.u(self.grid.t[i], np.atleast_2d(x))

    def grad_u(self, i, x):
        return self.problem.exact.grad_u(self.grid.t[i], np.atleast_2d(x))

    def z(self, i, x):
        return _exact_z(self.problem, self.grid.t[i], np.atleast_2d(x))

    def gamma(self, i, x):
        return self.problem.exact.gamma(self.grid.t[i], np.atleast_2d(x))

    def y0(self):
        return float(self.value(0, self.problem.x0[None])[0])


def _require_exact(problem):
    if problem.exact is None:
        raise UnsupportedProblem(f"problem {problem.name} has no exact solution")


def _exact_z(problem, t, x):
    return np.einsum("mji,mj->mi", problem.sigma_at(t, x), problem.exact.grad_u(t, x))


def scheme_error_measure(solution, problem, grid, m_eval=1000, seed=0, refine=8):
    """Three-term squared error of an estimator against the exact solution.

    Paths are simulated on ``grid`` refined ``refine`` times.  Returns
    ``max_y_error = max_i mean |Y_ti - U_i(X_ti)|^2`` and the time integrals
    of ``mean |Z_t - Z_i(X_ti)|^2`` and ``mean |Gamma_t - T_i(X_ti)|^2`` with
    the estimate held constant on each interval.
    """
    _require_exact(problem)
    fine = grid.refine(refine)
    rng = make_stream(seed, EVAL_STREAM, _EVAL_SCHEME)
    xs = simulate_batch(problem, fine, m_eval, rng).x
    exact = problem.exact
    y_err, z_err, g_err = [], 0.0, 0.0
    for i in range(grid.n + 1):
        x_i = xs[:, i * refine]
        y_err.append(float(np.mean((exact.u(grid.t[i], x_i) - solution.value(i, x_i)) ** 2)))
        if i == grid.n:
            break
        z_hat = solution.z(i, x_i)
        g_hat = solution.gamma(i, x_i)
        for s in range(refine):
            k = i * refine + s
            t, x = fine.t[k], xs[:, k]
            dt = fine.t[k + 1] - t
            z_err += dt * float(np.mean(np.sum((_exact_z(problem, t, x) - z_hat) ** 2, axis=1)))
            g_err += dt * float(np.mean((exact.gamma(t, x) - g_hat) ** 2))
    return {"max_y_error": max(y_err), "z_integral_error": float(z_err),
            "gamma_integral_error": float(g_err)}


def _between_corrected(values, k_inner):
    """Unbiased ``E_i int |V_t - mean_i V|^2 dt / dt`` from nested samples.

    ``values`` is [r, m_outer * k_inner, ...] over sub-times and inner paths.
    """
    r = values.shape[0]
    v = values.reshape((r, -1, k_inner) + values.shape[2:])
    path_avg = v.mean(axis=0)  # [m_outer, k, ...]
    within = ((v - path_avg[None]) ** 2).mean(axis=(0, 2))
    between = ((path_avg - path_avg.mean(axis=1, keepdims=True)) ** 2).sum(axis=1) / (k_inner - 1)
    total = within + between
    if total.ndim > 1:
        total = total.sum(axis=tuple(range(1, total.ndim)))
    return float(total.mean())


def regularity_probe(problem, grid, m_outer=200, m_inner=32, refine=8, seed=0):
    """Nested Monte-Carlo estimates of the L2-regularity of Z and Gamma.

    ``eps = sum_i E int_{ti}^{ti+1} |V_t - Vbar_i|^2 dt`` where ``Vbar_i`` is
    the conditional interval average given the state at ``t_i``.  Inner paths
    restart from each outer state; the between-path spread is corrected so
    the estimate is unbiased for the conditional variance.
    """
    _require_exact(problem)
    if m_inner < 2:
        raise InvalidArgument("m_inner must be at least 2")
    rng = make_stream(seed, EVAL_STREAM, _EVAL_PROBE)
    outer = simulate_batch(problem, grid, m_outer, rng).x
    exact = problem.exact
    eps_z = eps_g = 0.0
    for i in range(grid.n):
        dt = grid.t[i + 1] - grid.t[i]
        times = grid.t[i] + dt * np.arange(refine + 1) / refine
        start = np.repeat(outer[:, i], m_inner, axis=0)
        xs = propagate(problem, times, start, rng)[:refine]
        z = np.stack([_exact_z(problem, t, x) for t, x in zip(times, xs)])
        g = np.stack([exact.gamma(t, x) for t, x in zip(times, xs)])
        eps_z += dt * _between_corrected(z, m_inner)
        eps_g += dt * _between_corrected(g, m_inner)
    return {"eps_z": float(eps_z), "eps_gamma": float(eps_g)}


def exact_residual(problem, grid, m=10_000, seed=0, quad_nodes=64):
    """One-step residual of the exact solution, ``u(t_i+1, X_i+1) - F_i``.

    ``F_i`` uses the exact value, exact Z and the exact kernel
    ``u(t_i, x + beta(e)) - u(t_i, x)``.  Returns the time-summed mean square
    and the per-step values.
    """
    _require_exact(problem)
    rng = make_stream(seed, EVAL_STREAM, _EVAL_RESIDUAL)
    batch = simulate_batch(problem, grid, m, rng)
    levy = problem.levy
    rule = levy.default_rule(quad_nodes)
    u = problem.exact.u
    w_comp = levy.intensity * rule.weights
    w_gamma = w_comp * levy.gamma(rule.nodes)
    per_step = []
    for i in range(grid.n):
        t, dt = grid.t[i], grid.dt[i]
        x = batch.x[:, i]
        y = u(t, x)
        z = _exact_z(problem, t, x)
        nodes = np.broadcast_to(rule.nodes[None], (m,) + rule.nodes.shape)
        xk = np.repeat(x, len(rule), axis=0)
        shifted = xk + problem.beta_at(t, xk, nodes.reshape(-1, rule.nodes.shape[1]))
        kern = u(t, shifted).reshape(m, len(rule)) - y[:, None]
        jump_sum = np.zeros(m)
        owners, marks = batch.owners[i], batch.marks[i]
        if len(owners):
            xo = x[owners]
            np.add.at(jump_sum, owners, u(t, xo + problem.beta_at(t, xo, marks)) - y[owners])
        big_f = one_step_values(problem, t, dt, x, y, z, kern @ w_gamma, kern @ w_comp,
                                jump_sum, batch.dw[:, i])
        r = u(grid.t[i + 1], batch.x[:, i + 1]) - big_f
        per_step.append(float(np.mean(r * r)))
    return {"total": float(np.sum(per_step)), "per_step": per_step}


def strong_error_probe(problem, grid, m=10_000, refine=16, seed=0):
    """``max_i E sup_{t in [t_i, t_i+1]} |X_t - X_ti|^2`` on a refined reference grid."""
    rng = make_stream(seed, EVAL_STREAM, _EVAL_STRONG)
    xs = simulate_batch(problem, grid.refine(refine), m, rng).x
    worst = 0.0
    for i in range(grid.n):
        seg = xs[:, i * refine:(i + 1) * refine + 1]
        dev = np.sum((seg - seg[:, :1]) ** 2, axis=2).max(axis=1)
        worst = max(worst, float(dev.mean()))
    return worst


def loglog_slope(hs, errors):
    """Least-squares slope of log(error) against log(h)."""
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


SUMMARY_HEADER = ["benchmark", "d", "N", "M", "runs", "mean", "stddev", "rel_l1", "wall_time_s"]
RUNS_HEADER = ["benchmark", "d", "run", "seed", "y0", "exact", "rel_l1", "wall_time_s"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def summary_row(name, d, n, m, result, wall_time=None):
    return [name, d, n, m, len(result.reports), result.mean, result.stddev, result.rel_l1,
            wall_time]


def write_summary_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_runs_csv(path, name, d, result, timing=False):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUNS_HEADER)
        for rep in result.reports:
            w.writerow([_fmt(v) for v in (name, d, rep.run, rep.seed, rep.y0, rep.exact,
                                          rep.rel_l1, rep.wall_time if timing else None)])
