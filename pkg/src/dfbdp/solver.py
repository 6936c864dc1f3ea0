"""Backward dynamic-programming training of value and jump-kernel networks.

At each time index ``i`` (from N-1 down to 0) a value net ``U_i(x)`` and a
kernel net ``G_i(x, e)`` are fitted so that

    F_i = U_i(x) - f(t_i, x, U_i, Z_i, T_i) dt + Z_i . dW
          + sum_k G_i(x, e_k) - dt * int G_i(x, e) lambda(de)

matches ``U_{i+1}(X_{i+1})`` in mean square.  ``Z_i`` is sigma^T times a
central-difference gradient of ``U_i`` and ``T_i`` the gamma-weighted
integral of ``G_i``.  Parameter gradients are exact for this loss,
including the dependence through the difference stencil.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InvalidArgument, NumericFailure
from .forward import make_stream, simulate_batch
from .levy import compensator_integral, gamma_weighted_integral
from .network import (
    PARAM_NAMES,
    AdamState,
    MlpNet,
    adam_update,
    backward,
    clip_to_theta_gamma,
    forward,
    hidden_layer,
    init_net,
)

log = logging.getLogger(__name__)

# stream-key tags under a run seed
TRAIN_STREAM, INIT_STREAM, EVAL_STREAM = 0, 1, 2


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 1000
    iters_first: int = 2000
    iters_warm: int = 500
    lr: float = 1e-3
    lr_warm: Optional[float] = None
    lr_end: Optional[float] = None
    fd_h: float = 1e-4
    quad_nodes: int = 32
    seed: int = 0
    clip: bool = False
    gamma_m: float = 10.0
    hidden: Optional[int] = None
    warm_start: bool = True
    fixed_batch: bool = False

    def __post_init__(self):
        if self.batch < 1:
            raise InvalidArgument("batch must be >= 1")
        if self.iters_first < 0 or self.iters_warm < 0:
            raise InvalidArgument("iteration counts must be nonnegative")
        if not self.fd_h > 0:
            raise InvalidArgument("fd_h must be positive")
        if self.quad_nodes < 1:
            raise InvalidArgument("quad_nodes must be >= 1")
        if self.clip and not self.gamma_m > 0:
            raise InvalidArgument("gamma_m must be positive")

    def hidden_for(self, problem):
        if self.hidden is not None:
            return self.hidden
        return problem.params.get("hidden", problem.dim + 10)

    def learning_rate(self, warm, k, iters):
        """Geometric decay from the start rate to ``lr_end`` over one step."""
        start = (self.lr_warm or self.lr) if warm else self.lr
        if self.lr_end is None or iters <= 1:
            return start
        return start * (self.lr_end / start) ** (k / (iters - 1))


@dataclass(frozen=True)
class StepEstimators:
    u_net: MlpNet
    kernel_net: MlpNet
    i: int

    def copy(self, i=None):
        return StepEstimators(self.u_net.copy(), self.kernel_net.copy(),
                              self.i if i is None else i)


def fd_steps(x, h):
    """Per-sample difference step ``h * max(1, |x|_inf)``."""
    return h * np.maximum(1.0, np.abs(x).max(axis=1))


def grad_x_numeric(net, x, h):
    """Central-difference input gradient; ``h`` is a scalar or one step per sample.

    ``net`` may also be any callable mapping a batch [B, d] to [B] values.
    """
    fn = net if callable(net) else (lambda xb: forward(net, xb))
    if np.any(np.asarray(h) <= 0):
        raise InvalidArgument("difference step must be positive")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None] if single else x
    m, d = xb.shape
    hb = np.broadcast_to(np.asarray(h, dtype=float), (m,))
    shift = np.eye(d)[None, :, :] * hb[:, None, None]  # [m, d, d]
    plus = fn((xb[:, None, :] + shift).reshape(-1, d)).reshape(m, d)
    minus = fn((xb[:, None, :] - shift).reshape(-1, d)).reshape(m, d)
    g = (plus - minus) / (2.0 * hb[:, None])
    return g[0] if single else g


def z_estimate(problem, t, x, est, h):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None] if single else x
    g = grad_x_numeric(est.u_net, xb, fd_steps(xb, h))
    z = np.einsum("mji,mj->mi", problem.sigma_at(t, xb), g)
    return z[0] if single else z


def kernel_inputs(x, marks):
    """Rows ``concat(x[m], marks[k])`` for every (sample m, mark k): [M*K, d+q]."""
    m, k = len(x), len(marks)
    return np.concatenate([np.repeat(x, k, axis=0), np.tile(marks, (m, 1))], axis=1)


def _kernel_grid(net, x, nodes):
    """Kernel net at every ``(x[m], nodes[k])`` pair, using the split first layer.

    Returns the ``[M, K]`` outputs and the hidden activations ``[M, K, m]``.
    """
    d = x.shape[1]
    a = x @ net.w1[:, :d].T + net.b1
    b = nodes @ net.w1[:, d:].T
    h = a[:, None, :] + b[None, :, :]
    np.tanh(h, out=h)
    return h @ net.w2 + net.b2, h


def _kernel_grid_backward(net, x, nodes, h, upstream):
    """Parameter gradient of ``sum upstream[m, k] * G(x[m], nodes[k])``.

    Uses ``sum_k up (1 - h^2) = sum_k up - sum_k up h^2`` so the large
    [M, K, width] array is only read by two batched products.
    """
    width = h.shape[2]
    dw2 = upstream.reshape(-1) @ h.reshape(-1, width)
    h2 = h * h
    s_a = np.matmul(upstream[:, None, :], h2)[:, 0, :]
    s_b = np.matmul(upstream.T[:, None, :], h2.transpose(1, 0, 2))[:, 0, :]
    g_a = net.w2 * (upstream.sum(axis=1)[:, None] - s_a)
    g_b = net.w2 * (upstream.sum(axis=0)[:, None] - s_b)
    w1 = np.concatenate([g_a.T @ x, g_b.T @ nodes], axis=1)
    return MlpNet(w1=w1, b1=g_a.sum(axis=0), w2=dw2, b2=upstream.sum())


def _add_grads(a, b):
    return MlpNet(*[p + q for p, q in zip(a.params(), b.params())])


def f_function_value(problem, t, x, y, z, kernel_at_x, dt, dw, marks, rule=None):
    """One-step value ``F`` for a single sample.

    ``kernel_at_x`` maps a ``[K, q]`` mark array to K kernel values.
    """
    levy = problem.levy
    rule = levy.default_rule() if rule is None else rule
    x = np.asarray(x, dtype=float).reshape(1, -1)
    z = np.asarray(z, dtype=float).reshape(1, -1)
    comp = compensator_integral(levy, kernel_at_x, rule)
    gamma_hat = gamma_weighted_integral(levy, kernel_at_x, rule)
    f = problem.driver(t, x, np.array([float(y)]), z, np.array([gamma_hat]))[0]
    if not np.isfinite(f):
        raise NumericFailure(f"driver not finite at t={t}", t=t)
    jump_sum = 0.0
    if len(marks):
        jump_sum = float(np.sum(kernel_at_x(np.atleast_2d(np.asarray(marks, dtype=float)))))
    return float(y - f * dt + z[0] @ np.asarray(dw, dtype=float).reshape(-1) + jump_sum - dt * comp)


def one_step_values(problem, t, dt, x, y, z, gamma_hat, comp, jump_sum, dw):
    """Batched ``F = y - f dt + z.dW + sum of jumps - dt * compensator``."""
    f = problem.driver(t, x, y, z, gamma_hat)
    bad = ~np.isfinite(f)
    if bad.any():
        s = int(np.argmax(bad))
        raise NumericFailure(f"driver not finite at t={t}, sample {s}", t=t, sample=s)
    return y - f * dt + np.sum(z * dw, axis=1) + jump_sum - dt * comp


@dataclass
class LossTerms:
    loss: float
    residual: np.ndarray
    u_grad: Optional[MlpNet] = None
    kernel_grad: Optional[MlpNet] = None


def step_loss_terms(problem, t, dt, est, x, next_values, dw, marks, owners, rule, fd_h,
                    with_grad=True):
    """Batched loss ``mean |next - F|^2`` and its exact parameter gradient.

    ``marks``/``owners`` list the realized jumps in the interval and the
    sample each belongs to.
    """
    m, d = x.shape
    levy = problem.levy
    lam = levy.intensity
    u_net, k_net = est.u_net, est.kernel_net

    # value net at x and at the 2d stencil points, one batched pass
    h = fd_steps(x, fd_h)
    shift = np.eye(d)[None] * h[:, None, None]
    u_in = np.concatenate([x, (x[:, None, :] + shift).reshape(-1, d),
                           (x[:, None, :] - shift).reshape(-1, d)])
    hu = hidden_layer(u_net, u_in)
    u_out = hu @ u_net.w2 + u_net.b2
    y = u_out[:m]
    grad_fd = (u_out[m:m + m * d] - u_out[m + m * d:]).reshape(m, d) / (2.0 * h[:, None])
    sig = problem.sigma_at(t, x)
    z = np.einsum("mji,mj->mi", sig, grad_fd)

    # kernel net on the (sample x node) grid and at realized marks
    g_nodes, k_cache = _kernel_grid(k_net, x, rule.nodes)
    w_comp = lam * rule.weights
    w_gamma = w_comp * levy.gamma(rule.nodes)
    comp = g_nodes @ w_comp
    gamma_hat = g_nodes @ w_gamma
    jump_sum = np.zeros(m)
    if len(owners):
        mark_in = np.concatenate([x[owners], marks], axis=1)
        h_marks = hidden_layer(k_net, mark_in)
        np.add.at(jump_sum, owners, h_marks @ k_net.w2 + k_net.b2)

    big_f = one_step_values(problem, t, dt, x, y, z, gamma_hat, comp, jump_sum, dw)
    r = next_values - big_f
    loss = float(np.mean(r * r))
    if not with_grad:
        return LossTerms(loss, r)

    g_f = -2.0 * r / m
    fy, fz, fg = problem.driver_partials(t, x, y, z, gamma_hat)
    g_y = g_f * (1.0 - fy * dt)
    g_z = g_f[:, None] * (dw - fz * dt)
    g_gamma = -g_f * fg * dt
    g_grad = np.einsum("mji,mi->mj", sig, g_z) / (2.0 * h[:, None])
    up_u = np.concatenate([g_y, g_grad.reshape(-1), -g_grad.reshape(-1)])
    up_nodes = -dt * np.outer(g_f, w_comp) + np.outer(g_gamma, w_gamma)
    k_grad = _kernel_grid_backward(k_net, x, rule.nodes, k_cache, up_nodes)
    if len(owners):
        k_grad = _add_grads(k_grad, backward(k_net, mark_in, h_marks, g_f[owners]))
    return LossTerms(loss, r, backward(u_net, u_in, hu, up_u), k_grad)


def _step_inputs(problem, grid, i, batch, next_stage):
    x = batch.x[:, i]
    x_next = batch.x[:, i + 1]
    if next_stage is None:
        nxt = problem.terminal(x_next)
    else:
        nxt = forward(next_stage, x_next)
    return x, nxt, batch.dw[:, i], batch.marks[i], batch.owners[i]


def step_loss(problem, grid, i, est, next_values, batch, config, rule=None):
    """Loss and parameter gradient ``(u_grad, kernel_grad)`` on a stored batch."""
    rule = problem.levy.default_rule(config.quad_nodes) if rule is None else rule
    terms = step_loss_terms(problem, grid.t[i], grid.dt[i], est, batch.x[:, i],
                            np.asarray(next_values, dtype=float), batch.dw[:, i],
                            batch.marks[i], batch.owners[i], rule, config.fd_h)
    return terms.loss, (terms.u_grad, terms.kernel_grad)


def _fresh_estimators(problem, config, i, seed):
    rng = make_stream(seed, INIT_STREAM, i)
    hidden = config.hidden_for(problem)
    d, q = problem.dim, problem.levy.mark_dim
    return StepEstimators(init_net(d, hidden, rng), init_net(d + q, hidden, rng), i)


def train_step(problem, grid, i, next_stage, config, init=None, seed=None):
    """Fit step ``i``; ``next_stage`` is the trained U_{i+1} net or None for g.

    ``init`` warm-starts from given estimators.  Returns the estimators and
    the per-iteration loss trace.
    """
    seed = config.seed if seed is None else seed
    est = init.copy(i) if init is not None else _fresh_estimators(problem, config, i, seed)
    warm = init is not None
    iters = config.iters_warm if warm else config.iters_first
    rule = problem.levy.default_rule(config.quad_nodes)
    t, dt = grid.t[i], grid.dt[i]
    names = [f"u_net.{k}" for k in PARAM_NAMES] + [f"kernel_net.{k}" for k in PARAM_NAMES]
    state = AdamState.for_params(est.u_net.params() + est.kernel_net.params())
    trace = np.empty(iters)
    batch = None
    for it in range(iters):
        if batch is None or not config.fixed_batch:
            rng = make_stream(seed, TRAIN_STREAM, i, 0 if config.fixed_batch else it)
            batch = simulate_batch(problem, grid, config.batch, rng, steps=i + 1)
        x, nxt, dw, marks, owners = _step_inputs(problem, grid, i, batch, next_stage)
        terms = step_loss_terms(problem, t, dt, est, x, nxt, dw, marks, owners, rule,
                                config.fd_h)
        trace[it] = terms.loss
        if not np.isfinite(terms.loss):
            raise NumericFailure(f"loss not finite at step {i}, iteration {it}",
                                 step=i, iteration=it, trace=trace[:it + 1].tolist())
        params = adam_update(state, est.u_net.params() + est.kernel_net.params(),
                             terms.u_grad.params() + terms.kernel_grad.params(), names,
                             lr=config.learning_rate(warm, it, iters))
        u_net, k_net = MlpNet.from_params(params[:4]), MlpNet.from_params(params[4:])
        if config.clip:
            u_net = clip_to_theta_gamma(u_net, config.gamma_m)
            k_net = clip_to_theta_gamma(k_net, config.gamma_m)
        est = StepEstimators(u_net, k_net, i)
    return est, trace


@dataclass
class StepSolution:
    problem: object
    grid: object
    estimators: list
    config: TrainConfig
    final_losses: list = field(default_factory=list)
    traces: list = field(default_factory=list)

    def value(self, i, x):
        """``U_i(x)`` for a batch ``x`` [M, d]; ``g`` at i = N."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if i == self.grid.n:
            return self.problem.terminal(x)
        return forward(self.estimators[i].u_net, x)

    def z(self, i, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return z_estimate(self.problem, self.grid.t[i], x, self.estimators[i], self.config.fd_h)

    def grad_u(self, i, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return grad_x_numeric(self.estimators[i].u_net, x, fd_steps(x, self.config.fd_h))

    def gamma(self, i, x):
        """Jump-part estimate: gamma-weighted integral of the kernel net, per sample."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        levy = self.problem.levy
        rule = levy.default_rule(self.config.quad_nodes)
        g = forward(self.estimators[i].kernel_net, kernel_inputs(x, rule.nodes))
        g = g.reshape(len(x), len(rule))
        return g @ (levy.intensity * rule.weights * levy.gamma(rule.nodes))

    def y0(self):
        return float(self.value(0, self.problem.x0[None])[0])


def solve(problem, grid, config, seed=None):
    """Train all steps backward from N-1 to 0."""
    if abs(grid.horizon - problem.horizon) > 1e-12:
        raise InvalidArgument("grid horizon differs from the problem horizon")
    seed = config.seed if seed is None else seed
    n = grid.n
    estimators = [None] * n
    finals, traces = [None] * n, [None] * n
    prev = None
    for i in range(n - 1, -1, -1):
        init = prev if (config.warm_start and prev is not None) else None
        next_stage = None if prev is None else prev.u_net
        est, trace = train_step(problem, grid, i, next_stage, config, init=init, seed=seed)
        estimators[i] = est
        traces[i] = trace
        finals[i] = float(trace[-1]) if len(trace) else float("nan")
        log.debug("step %d: final loss %.3e", i, finals[i])
        prev = est
    return StepSolution(problem, grid, estimators, replace(config, seed=seed), finals, traces)
