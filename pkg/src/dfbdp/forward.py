"""Forward jump-diffusion: time grids, problem definition, Euler scheme.

The forward state follows

    X_{i+1} = X_i + b(t_i, X_i) dt + sigma(t_i, X_i) dW_i
              + sum_k beta(t_i, X_i, e_k) - dt * intensity * E_rho[beta(t_i, X_i, .)]

with coefficients frozen at the left endpoint.  Only jump counts and marks
are stored; jump times inside an interval never enter the scheme.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgument, NumericFailure
from .levy import LevyModel, mark_mean, sample_marks


def make_stream(seed, *key):
    """Independent generator for the counter tuple ``key`` under ``seed``."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class TimeGrid:
    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise InvalidArgument("time grid needs at least two knots")
        if t[0] != 0.0:
            raise InvalidArgument("time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise InvalidArgument("time grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @classmethod
    def uniform(cls, n, horizon=1.0):
        if n < 1:
            raise InvalidArgument("need at least one interval")
        return cls(np.linspace(0.0, horizon, n + 1))

    @property
    def n(self):
        return len(self.t) - 1

    @property
    def horizon(self):
        return float(self.t[-1])

    @property
    def dt(self):
        return np.diff(self.t)

    @property
    def mesh(self):
        return float(self.dt.max())

    def refine(self, r):
        """Grid with every interval split into ``r`` equal pieces."""
        if r < 1:
            raise InvalidArgument("refinement factor must be >= 1")
        frac = np.arange(r) / r
        inner = (self.t[:-1, None] + frac[None, :] * self.dt[:, None]).reshape(-1)
        return TimeGrid(np.append(inner, self.t[-1]))

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.t, other.t)

    def __hash__(self):
        return hash(self.t.tobytes())


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form solution fields, all vectorized over ``x`` of shape [M, d].

    ``u`` -> [M], ``grad_u`` -> [M, d], ``gamma`` -> [M] (the jump part B[u]).
    """

    u: Callable
    grad_u: Callable
    gamma: Callable


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Decoupled FBSDE with jumps / semilinear PIDE data.

    Vectorized callables (M samples, K jumps, d state dim, q mark dim):

    * ``drift(t, x[M,d]) -> [M,d]``
    * ``sigma(t, x[M,d]) -> [M,d,d]`` or a constant ``[d,d]``
    * ``beta(t, x[K,d], e[K,q]) -> [K,d]``; ``None`` means ``beta = e``
    * ``driver(t, x, y[M], z[M,d], gamma[M]) -> [M]``
    * ``driver_grad`` (optional) returns the partials ``(f_y, f_z, f_gamma)``
    * ``terminal(x[M,d]) -> [M]``
    """

    dim: int
    horizon: float
    sigma: Callable
    driver: Callable
    terminal: Callable
    levy: LevyModel
    x0: np.ndarray
    drift: Optional[Callable] = None
    beta: Optional[Callable] = None
    driver_grad: Optional[Callable] = None
    exact: Optional[ExactSolution] = None
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if len(x0) != self.dim:
            raise InvalidArgument(f"x0 has {len(x0)} entries, expected {self.dim}")
        if self.beta is None and self.levy.mark_dim != self.dim:
            raise InvalidArgument("beta = e requires mark_dim == dim")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)

    def drift_at(self, t, x):
        if self.drift is None:
            return np.zeros_like(x)
        return np.asarray(self.drift(t, x), dtype=float)

    def sigma_at(self, t, x):
        s = np.asarray(self.sigma(t, x), dtype=float)
        if s.ndim == 2:
            s = np.broadcast_to(s, (len(x),) + s.shape)
        return s

    def beta_at(self, t, x, marks):
        if self.beta is None:
            return marks
        return np.asarray(self.beta(t, x, marks), dtype=float)

    def jump_compensator(self, t, x, rule=None):
        """``intensity * E_rho[beta(t, x, e)]`` per sample, shape [M, d]."""
        lam = self.levy.intensity
        if lam == 0:
            return np.zeros_like(x)
        if self.beta is None:
            return np.broadcast_to(lam * mark_mean(self.levy), x.shape)
        rule = self.levy.default_rule() if rule is None else rule
        out = np.zeros_like(x)
        for node, w in zip(rule.nodes, rule.weights):
            out += w * self.beta_at(t, x, np.broadcast_to(node, (len(x), len(node))))
        return lam * out

    def driver_partials(self, t, x, y, z, gamma, eps=1e-6):
        """Partials of the driver; central differences when no closed form is given."""
        if self.driver_grad is not None:
            fy, fz, fg = self.driver_grad(t, x, y, z, gamma)
            m = len(y)
            return (np.broadcast_to(fy, (m,)), np.broadcast_to(fz, z.shape),
                    np.broadcast_to(fg, (m,)))
        f = self.driver
        fy = (f(t, x, y + eps, z, gamma) - f(t, x, y - eps, z, gamma)) / (2 * eps)
        fg = (f(t, x, y, z, gamma + eps) - f(t, x, y, z, gamma - eps)) / (2 * eps)
        fz = np.empty_like(z)
        for j in range(z.shape[1]):
            dz = np.zeros_like(z)
            dz[:, j] = eps
            fz[:, j] = (f(t, x, y, z + dz, gamma) - f(t, x, y, z - dz, gamma)) / (2 * eps)
        return fy, fz, fg


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Simulated forward paths plus the randomness that produced them.

    ``marks[i]``/``owners[i]`` hold the jumps of interval ``i`` for the whole
    batch: mark vectors and the index of the sample each belongs to, in the
    order they were added to the state.
    """

    x: np.ndarray  # [M, n+1, d]
    dw: np.ndarray  # [M, n, d]
    counts: np.ndarray  # [M, n]
    marks: tuple
    owners: tuple
    grid: TimeGrid

    @property
    def size(self):
        return self.x.shape[0]

    @property
    def steps(self):
        return self.dw.shape[1]

    def jumps(self, m, i):
        return [e for e in self.marks[i][self.owners[i] == m]]


def _advance(problem, t, dt, x, dw, jump_sum):
    # einsum keeps each row's arithmetic independent of the batch size
    sig = np.asarray(problem.sigma(t, x), dtype=float)
    if sig.ndim == 2:
        diffusion = np.einsum("ij,mj->mi", sig, dw)
    else:
        diffusion = np.einsum("mij,mj->mi", sig, dw)
    comp = problem.jump_compensator(t, x)
    return x + problem.drift_at(t, x) * dt + diffusion + jump_sum - dt * comp


def _check_finite(x_next, i):
    bad = ~np.all(np.isfinite(x_next), axis=1)
    if bad.any():
        m = int(np.argmax(bad))
        raise NumericFailure(f"forward state not finite at sample {m}, interval {i}",
                             sample=m, interval=i)


def euler_step(problem, t_i, dt, x, dw, marks):
    """One Euler step for a single sample; ``marks`` is a list of mark vectors."""
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    dw = np.asarray(dw, dtype=float).reshape(1, -1)
    jump_sum = np.zeros_like(x)
    for e in marks:
        e = np.asarray(e, dtype=float).reshape(1, -1)
        jump_sum += problem.beta_at(t_i, x, e)
    x_next = _advance(problem, t_i, dt, x, dw, jump_sum)
    _check_finite(x_next, None)
    return x_next[0]


def _sample_jumps(problem, t, dt, x, rng):
    """Counts, owners, marks and summed jump sizes for one interval."""
    m = len(x)
    jump_sum = np.zeros_like(x)
    if problem.levy.intensity == 0:
        return 0, np.empty(0, dtype=np.int64), np.empty((0, problem.levy.mark_dim)), jump_sum
    counts = rng.poisson(problem.levy.intensity * dt, size=m)
    owner = np.repeat(np.arange(m), counts)
    e = sample_marks(problem.levy, len(owner), rng)
    if len(owner):
        np.add.at(jump_sum, owner, problem.beta_at(t, x[owner], e))
    return counts, owner, e, jump_sum


def propagate(problem, times, x_start, rng):
    """Euler states at ``times`` starting from ``x_start`` [M, d] at ``times[0]``.

    Returns ``[len(times), M, d]``; randomness is not recorded.
    """
    times = np.asarray(times, dtype=float)
    xs = np.empty((len(times),) + np.shape(x_start))
    xs[0] = x_start
    for i, (t, dt) in enumerate(zip(times[:-1], np.diff(times))):
        dw = rng.standard_normal(xs[i].shape)
        dw *= np.sqrt(dt)
        jump_sum = _sample_jumps(problem, t, dt, xs[i], rng)[3]
        xs[i + 1] = _advance(problem, t, dt, xs[i], dw, jump_sum)
    if not np.isfinite(xs).all():
        raise NumericFailure("forward state not finite during propagation")
    return xs


def simulate_batch(problem, grid, m, rng, steps=None):
    """Simulate ``m`` paths over the first ``steps`` intervals of ``grid``."""
    if m < 1:
        raise InvalidArgument("batch size must be at least 1")
    steps = grid.n if steps is None else steps
    if not 0 <= steps <= grid.n:
        raise InvalidArgument(f"steps must lie in [0, {grid.n}]")
    d = problem.dim
    dts = grid.dt
    # step-major storage so each step touches contiguous memory
    xs = np.empty((steps + 1, m, d))
    xs[0] = problem.x0
    dws = np.empty((steps, m, d))
    counts = np.zeros((steps, m), dtype=np.int64)
    marks, owners = [], []
    for i in range(steps):
        t, dt = grid.t[i], dts[i]
        dw = rng.standard_normal((m, d))
        dw *= np.sqrt(dt)
        dws[i] = dw
        counts[i], owner, e, jump_sum = _sample_jumps(problem, t, dt, xs[i], rng)
        marks.append(e)
        owners.append(owner)
        xs[i + 1] = _advance(problem, t, dt, xs[i], dw, jump_sum)
    if not np.isfinite(xs).all():
        first = int(np.argmax(~np.isfinite(xs).all(axis=(1, 2)))) - 1
        _check_finite(xs[first + 1], first)
    return PathBatch(x=xs.transpose(1, 0, 2), dw=dws.transpose(1, 0, 2), counts=counts.T,
                     marks=tuple(marks), owners=tuple(owners), grid=grid)


def write_paths_csv(path, batch):
    """Dump states as rows ``(sample, i, t, x_1..x_d, jump_count)``.

    ``jump_count`` at knot ``i`` counts the jumps in ``(t_{i-1}, t_i]``.
    """
    m, n1, d = batch.x.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "i", "t"] + [f"x_{j + 1}" for j in range(d)] + ["jump_count"])
        for s in range(m):
            for i in range(n1):
                jc = int(batch.counts[s, i - 1]) if i > 0 else 0
                w.writerow([s, i, repr(float(batch.grid.t[i]))]
                           + [repr(float(v)) for v in batch.x[s, i]] + [jc])
