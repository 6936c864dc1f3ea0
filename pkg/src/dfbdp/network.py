"""One-hidden-layer tanh networks with hand-written gradients, plus Adam.

``forward(net, x) = w2 . tanh(w1 x + b1) + b2``.  Every function accepts a
single input vector ``[in_dim]`` or a batch ``[B, in_dim]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericFailure

PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True, eq=False)
class MlpNet:
    w1: np.ndarray  # [m, in_dim]
    b1: np.ndarray  # [m]
    w2: np.ndarray  # [m]
    b2: np.ndarray  # shape ()

    def __post_init__(self):
        for name in PARAM_NAMES:
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        m = self.w1.shape[0]
        if self.w1.ndim != 2 or self.b1.shape != (m,) or self.w2.shape != (m,) or self.b2.shape != ():
            raise InvalidArgument("inconsistent network parameter shapes")

    @property
    def in_dim(self):
        return self.w1.shape[1]

    @property
    def hidden(self):
        return self.w1.shape[0]

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    @classmethod
    def from_params(cls, params):
        return cls(*params)

    def copy(self):
        return MlpNet(*[p.copy() for p in self.params()])

    def to_dict(self):
        return {"in_dim": self.in_dim, "hidden": self.hidden,
                **{k: np.asarray(v).tolist() for k, v in zip(PARAM_NAMES, self.params())}}

    @classmethod
    def from_dict(cls, data):
        net = cls(*(data[k] for k in PARAM_NAMES))
        if net.in_dim != data["in_dim"] or net.hidden != data["hidden"]:
            raise InvalidArgument("checkpoint shape header does not match its arrays")
        return net


def init_net(in_dim, hidden, rng):
    """Glorot-uniform weights, zero biases."""
    a1 = np.sqrt(6.0 / (in_dim + hidden))
    a2 = np.sqrt(6.0 / (hidden + 1))
    return MlpNet(w1=rng.uniform(-a1, a1, (hidden, in_dim)), b1=np.zeros(hidden),
                  w2=rng.uniform(-a2, a2, hidden), b2=0.0)


def zeros_like(net):
    return MlpNet(*[np.zeros_like(p) for p in net.params()])


def _as_batch(net, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.in_dim:
        raise InvalidArgument(f"input has shape {x.shape}, network expects in_dim={net.in_dim}")
    return xb, single


def hidden_layer(net, xb):
    return np.tanh(xb @ net.w1.T + net.b1)


def forward(net, x):
    xb, single = _as_batch(net, x)
    out = hidden_layer(net, xb) @ net.w2 + net.b2
    return float(out[0]) if single else out


def backward(net, xb, h, upstream):
    """Gradient of ``sum_b upstream[b] * forward(net, xb[b])`` given the hidden layer ``h``."""
    g_pre = np.outer(upstream, net.w2) * (1.0 - h * h)
    return MlpNet(w1=g_pre.T @ xb, b1=g_pre.sum(axis=0), w2=h.T @ upstream, b2=upstream.sum())


def grad_params(net, x, upstream):
    xb, _ = _as_batch(net, x)
    upstream = np.broadcast_to(np.asarray(upstream, dtype=float), (len(xb),))
    return backward(net, xb, hidden_layer(net, xb), upstream)


def grad_input_analytic(net, x):
    xb, single = _as_batch(net, x)
    h = hidden_layer(net, xb)
    g = ((1.0 - h * h) * net.w2) @ net.w1
    return g[0] if single else g


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kw):
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_update(state, params, grads, names=None, lr=None):
    """One bias-corrected Adam step.  Mutates ``state``; returns new parameter arrays."""
    names = names or [f"block{k}" for k in range(len(params))]
    for name, g in zip(names, grads):
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"non-finite gradient in parameter block {name}", block=name)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    lr = state.lr if lr is None else lr
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    new = []
    for k, (p, g) in enumerate(zip(params, grads)):
        if state.m[k].shape != p.shape:
            raise InvalidArgument(f"moment shape mismatch in block {names[k]}")
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        new.append(p - lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps))
    return new


def clip_to_theta_gamma(net, gamma_m):
    """Project onto ``max_k |w1[k]| <= gamma_m`` and ``sum_k |w2[k]| <= gamma_m``.

    Rows of ``w1`` are shrunk to Euclidean norm ``gamma_m``; ``w2`` is rescaled
    in L1.  Nets already inside the set come back unchanged.
    """
    if not gamma_m > 0:
        raise InvalidArgument("gamma_m must be positive")
    w1 = net.w1.copy()
    norms = np.linalg.norm(w1, axis=1)
    over = norms > gamma_m
    w1[over] *= (gamma_m / norms[over])[:, None]
    w2 = net.w2.copy()
    l1 = np.abs(w2).sum()
    if l1 > gamma_m:
        w2 *= gamma_m / l1
    return MlpNet(w1=w1, b1=net.b1.copy(), w2=w2, b2=net.b2.copy())


def save_json(path, nets):
    """Write ``{name: net}`` to a JSON checkpoint with per-net shape headers."""
    with open(path, "w") as fh:
        json.dump({k: v.to_dict() for k, v in nets.items()}, fh)


def load_json(path):
    with open(path) as fh:
        data = json.load(fh)
    return {k: MlpNet.from_dict(v) for k, v in data.items()}
