"""Finite-activity Levy measures ``lambda(de) = intensity * rho(e) de``.

Each mark distribution knows how to sample, its mean, and a default
quadrature rule for integrals against ``rho``.  Marks are always handled as
2-D arrays ``[count, mark_dim]`` so scalar and vector marks share one code
path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgument, NumericFailure

DEFAULT_NODES = 32


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights discretizing an integral against a probability density."""

    nodes: np.ndarray  # [K, mark_dim]
    weights: np.ndarray  # [K]
    kind: str

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        weights = np.asarray(self.weights, dtype=float)
        if len(weights) != len(nodes):
            raise InvalidArgument("quadrature nodes and weights differ in length")
        if np.any(weights < 0):
            raise InvalidArgument("quadrature weights must be nonnegative")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class Normal:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise InvalidArgument("normal mark std must be positive")

    dim = 1

    def sample(self, n, rng):
        return rng.normal(self.mean, self.std, size=(n, 1))

    def expectation(self):
        return np.array([self.mean])

    def default_rule(self, n=DEFAULT_NODES):
        # probabilists' Hermite: weight exp(-s^2/2)
        s, w = np.polynomial.hermite_e.hermegauss(n)
        return QuadratureRule(self.mean + self.std * s, w / np.sqrt(2 * np.pi), "gauss_hermite")


@dataclass(frozen=True)
class Uniform:
    half_width: float

    def __post_init__(self):
        if not self.half_width > 0:
            raise InvalidArgument("uniform half width must be positive")

    dim = 1

    def sample(self, n, rng):
        return rng.uniform(-self.half_width, self.half_width, size=(n, 1))

    def expectation(self):
        return np.array([0.0])

    def default_rule(self, n=DEFAULT_NODES):
        s, w = np.polynomial.legendre.leggauss(n)
        return QuadratureRule(self.half_width * s, 0.5 * w, "gauss_legendre")


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise InvalidArgument("exponential rate must be positive")

    dim = 1

    def sample(self, n, rng):
        return rng.exponential(1.0 / self.rate, size=(n, 1))

    def expectation(self):
        return np.array([1.0 / self.rate])

    def default_rule(self, n=DEFAULT_NODES):
        # Laguerre weight exp(-s) with e = s / rate
        s, w = np.polynomial.laguerre.laggauss(n)
        return QuadratureRule(s / self.rate, w, "gauss_laguerre")


@dataclass(frozen=True)
class Bernoulli:
    """Two-point marks: ``a1`` with probability ``p``, ``a2`` otherwise."""

    a1: float
    a2: float
    p: float

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise InvalidArgument("bernoulli probability must lie in [0, 1]")

    dim = 1

    def sample(self, n, rng):
        u = rng.random(n)
        return np.where(u < self.p, self.a1, self.a2)[:, None]

    def expectation(self):
        return np.array([self.p * self.a1 + (1 - self.p) * self.a2])

    def default_rule(self, n=None):
        return QuadratureRule([self.a1, self.a2], [self.p, 1 - self.p], "exact_discrete")


@dataclass(frozen=True)
class PointMass:
    value: tuple

    def __post_init__(self):
        object.__setattr__(self, "value", tuple(float(v) for v in np.atleast_1d(self.value)))

    @property
    def dim(self):
        return len(self.value)

    def sample(self, n, rng):
        return np.tile(np.array(self.value), (n, 1))

    def expectation(self):
        return np.array(self.value)

    def default_rule(self, n=None):
        return QuadratureRule(np.array([self.value]), [1.0], "exact_discrete")


def _unit_gamma(nodes):
    return np.ones(len(nodes))


@dataclass(frozen=True)
class LevyModel:
    """Compound-Poisson Levy measure with a bounded weight ``gamma(e)``.

    ``intensity`` may be zero, which switches jumps off entirely.
    """

    intensity: float
    mark_dist: object
    gamma_weight: Callable = field(default=_unit_gamma, compare=False)
    gamma_bound: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.intensity) and self.intensity >= 0):
            raise InvalidArgument(f"intensity must be a nonnegative number, got {self.intensity}")
        if self.gamma_bound <= 0:
            raise InvalidArgument("gamma_bound must be positive")

    @property
    def mark_dim(self):
        return self.mark_dist.dim

    def default_rule(self, n=DEFAULT_NODES):
        return self.mark_dist.default_rule(n)

    def gamma(self, marks):
        marks = np.atleast_2d(np.asarray(marks, dtype=float))
        values = np.broadcast_to(np.asarray(self.gamma_weight(marks), dtype=float), (len(marks),))
        if np.any(np.abs(values) > self.gamma_bound):
            raise InvalidArgument(f"gamma weight exceeds its bound {self.gamma_bound}")
        return values


def sample_marks(model, n, rng):
    """Draw ``n`` independent marks as an ``[n, mark_dim]`` array."""
    if n == 0:
        return np.empty((0, model.mark_dim))
    return model.mark_dist.sample(n, rng)


def sample_jump_marks(model, dt, rng):
    """Marks of the jumps falling in one interval of length ``dt``."""
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    count = rng.poisson(model.intensity * dt)
    return sample_marks(model, int(count), rng)


def mark_mean(model):
    return model.mark_dist.expectation()


def monte_carlo_rule(model, n, rng):
    return QuadratureRule(sample_marks(model, n, rng), np.full(n, 1.0 / n), "monte_carlo")


def _kernel_values(kernel, rule):
    values = np.asarray(kernel(rule.nodes), dtype=float)
    values = np.broadcast_to(values.reshape(-1) if values.ndim else values, (len(rule),))
    bad = ~np.isfinite(values)
    if bad.any():
        k = int(np.argmax(bad))
        raise NumericFailure(f"kernel is not finite at node {rule.nodes[k].tolist()}", node=k)
    return values


def compensator_integral(model, kernel, rule=None):
    """``int kernel(e) lambda(de)`` by the given rule (default rule if None).

    ``kernel`` receives the whole ``[K, mark_dim]`` node array and returns K
    values.
    """
    rule = model.default_rule() if rule is None else rule
    return model.intensity * float(np.dot(rule.weights, _kernel_values(kernel, rule)))


def gamma_weighted_integral(model, kernel, rule=None):
    """``int kernel(e) gamma(e) lambda(de)``, the jump-part functional."""
    rule = model.default_rule() if rule is None else rule
    values = _kernel_values(kernel, rule) * model.gamma(rule.nodes)
    return model.intensity * float(np.dot(rule.weights, values))
