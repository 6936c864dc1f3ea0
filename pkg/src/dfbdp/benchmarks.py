"""Ready-made benchmark problems with closed-form solutions.

ex1_*       d=1, u(t,x) = exp(t-1) sin x under four jump-mark laws.
ex2_diag    d>=2, diagonal diffusion, constant jump vector, u = |x|^2 / d.
ex3_coupled d>=2, lower-bidiagonal diffusion, otherwise as ex2.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgument
from .forward import ExactSolution, ProblemSpec
from .levy import Bernoulli, Exponential, LevyModel, Normal, PointMass, Uniform

EX1_NAMES = ("ex1_uniform", "ex1_normal", "ex1_exponential", "ex1_bernoulli")
HIGH_DIM_NAMES = ("ex2_diag", "ex3_coupled")
NAMES = EX1_NAMES + HIGH_DIM_NAMES

# ex1 constants
DELTA = 0.7
NORMAL_MEAN, NORMAL_STD = 0.4, 0.25
EXP_RATE = 3.0
A1, A2, P = -0.4, 0.8, 0.5
EX1_INTENSITY = 1.0
EX1_X0 = np.pi / 2

# ex2 / ex3 constants
JUMP_SIZE = 0.1
HD_INTENSITY = 0.3
EX2_THETA = 0.3
EX3_THETA = 0.2


def _ex1_mark_law(name):
    return {
        "ex1_uniform": Uniform(DELTA),
        "ex1_normal": Normal(NORMAL_MEAN, NORMAL_STD),
        "ex1_exponential": Exponential(EXP_RATE),
        "ex1_bernoulli": Bernoulli(A1, A2, P),
    }[name]


def _ex1_jump_compensation(name, t, x):
    """Explicit jump term appearing in each ex1 driver (z-independent part)."""
    lam = EX1_INTENSITY
    s = np.exp(t - 1.0)
    if name == "ex1_uniform":
        return -lam * s * (np.sin(DELTA) / DELTA - 1.0) * np.sin(x)
    if name == "ex1_normal":
        return -lam * s * (np.exp(-0.5 * NORMAL_STD**2) * np.sin(x + NORMAL_MEAN) - np.sin(x))
    if name == "ex1_exponential":
        r = EXP_RATE
        return -lam * s * (r / (r**2 + 1) * np.cos(x) - 1.0 / (r**2 + 1) * np.sin(x))
    return -lam * s * (P * np.sin(x + A1) + (1 - P) * np.sin(x + A2) - np.sin(x))


def _ex1_z_coefficient(name):
    # intensity * E[e]: cancels the -E[e] u_x part of the compensated jump integral
    return EX1_INTENSITY * {
        "ex1_uniform": 0.0,
        "ex1_normal": NORMAL_MEAN,
        "ex1_exponential": 1.0 / EXP_RATE,
        "ex1_bernoulli": P * A1 + (1 - P) * A2,
    }[name]


def _ex1_cos_sin_moments(name):
    """``(E cos e, E sin e)`` of the mark law, from its characteristic function."""
    if name == "ex1_uniform":
        return np.sin(DELTA) / DELTA, 0.0
    if name == "ex1_normal":
        damp = np.exp(-0.5 * NORMAL_STD**2)
        return damp * np.cos(NORMAL_MEAN), damp * np.sin(NORMAL_MEAN)
    if name == "ex1_exponential":
        r = EXP_RATE
        return r**2 / (r**2 + 1), r / (r**2 + 1)
    return P * np.cos(A1) + (1 - P) * np.cos(A2), P * np.sin(A1) + (1 - P) * np.sin(A2)


def _make_ex1(name):
    c_z = _ex1_z_coefficient(name)

    def driver(t, x, y, z, gamma):
        x1, z1 = x[:, 0], z[:, 0]
        damp = np.exp(z1 - np.exp(t - 1.0) * np.cos(x1))
        return -y * damp + 0.5 * y + c_z * z1 + _ex1_jump_compensation(name, t, x1)

    def driver_grad(t, x, y, z, gamma):
        damp = np.exp(z[:, 0] - np.exp(t - 1.0) * np.cos(x[:, 0]))
        return 0.5 - damp, (c_z - y * damp)[:, None], 0.0

    cos_m, sin_m = _ex1_cos_sin_moments(name)

    exact = ExactSolution(
        u=lambda t, x: np.exp(t - 1.0) * np.sin(x[:, 0]),
        grad_u=lambda t, x: np.exp(t - 1.0) * np.cos(x),
        gamma=lambda t, x: EX1_INTENSITY * np.exp(t - 1.0)
        * (cos_m * np.sin(x[:, 0]) + sin_m * np.cos(x[:, 0]) - np.sin(x[:, 0])),
    )
    return ProblemSpec(
        dim=1,
        horizon=1.0,
        sigma=lambda t, x: np.eye(1),
        driver=driver,
        driver_grad=driver_grad,
        terminal=lambda x: np.sin(x[:, 0]),
        levy=LevyModel(EX1_INTENSITY, _ex1_mark_law(name)),
        x0=[EX1_X0],
        exact=exact,
        name=name,
        params={"hidden": 1 + 20, "n": 30, "runs": 10},
    )


def coupled_sigma(d, theta):
    """``theta`` times ones on the diagonal and the first subdiagonal."""
    return theta * (np.eye(d) + np.eye(d, k=-1))


def _make_high_dim(name, d):
    if d is None or int(d) != d or d < 2:
        raise InvalidArgument(f"{name} needs an integer dimension d >= 2, got {d}")
    d = int(d)
    lam, mu = HD_INTENSITY, JUMP_SIZE
    if name == "ex2_diag":
        theta = EX2_THETA
        sig = theta * np.eye(d)
        const = -(lam * mu**2 + theta**2)
    else:
        theta = EX3_THETA
        sig = coupled_sigma(d, theta)
        const = -(lam * mu**2 + (2 * d - 1) / d * theta**2)
    jump = np.full(d, mu)

    def u(t, x):
        return np.sum(x * x, axis=1) / d

    exact = ExactSolution(
        u=u,
        grad_u=lambda t, x: 2.0 * x / d,
        gamma=lambda t, x: lam * (u(t, x + jump) - u(t, x)),
    )
    return ProblemSpec(
        dim=d,
        horizon=1.0,
        sigma=lambda t, x: sig,
        driver=lambda t, x, y, z, gamma: np.full(len(y), const),
        driver_grad=lambda t, x, y, z, gamma: (0.0, 0.0, 0.0),
        terminal=lambda x: np.sum(x * x, axis=1) / d,
        levy=LevyModel(lam, PointMass(jump)),
        x0=np.ones(d),
        exact=exact,
        name=name,
        params={"hidden": d + 10, "n": 60, "runs": 1, "theta": theta},
    )


def make_problem(name, d=None):
    """Build the named benchmark.  ``d`` is required for ex2/ex3 and must be 1 (or None) for ex1."""
    if name in EX1_NAMES:
        if d not in (None, 1):
            raise InvalidArgument(f"{name} is one-dimensional, got d={d}")
        return _make_ex1(name)
    if name in HIGH_DIM_NAMES:
        return _make_high_dim(name, d)
    raise InvalidArgument(f"unknown benchmark {name!r}; choose from {', '.join(NAMES)}")


def exact_fields(problem, t, x, d=None):
    """Closed-form ``u``, ``grad_u``, ``Z = sigma^T grad_u`` and ``Gamma`` at (t, x).

    ``problem`` may be a ProblemSpec or a benchmark name.  ``x`` is [d] or [M, d].
    """
    if isinstance(problem, str):
        problem = make_problem(problem, d)
    if problem.exact is None:
        raise InvalidArgument(f"problem {problem.name} has no exact solution")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None] if single else x
    grad = problem.exact.grad_u(t, xb)
    sig = problem.sigma_at(t, xb)
    out = {
        "u": problem.exact.u(t, xb),
        "grad_u": grad,
        "z": np.einsum("mji,mj->mi", sig, grad),
        "Gamma": problem.exact.gamma(t, xb),
    }
    if single:
        out = {k: (float(v[0]) if v.ndim == 1 else v[0]) for k, v in out.items()}
    return out
