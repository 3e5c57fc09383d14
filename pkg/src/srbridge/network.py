"""Dense score network ``S(t, x) -> R^k`` with hand-written reverse mode.

The input is ``(t, x)``; hidden layers apply an activation and the output
layer is linear.  Input Jacobians with respect to ``x`` are propagated in
forward (tangent) mode alongside the activations, and the reverse pass
differentiates through both, so losses that depend on the Jacobian (the
divergence loss) get exact parameter gradients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, NonFiniteLossError

FORMAT_VERSION = 1
ACTIVATIONS = ("elu", "relu", "linear")


def _act(name, z, order=2):
    """Activation value and, up to ``order``, its first and second derivative."""
    if name == "elu":
        neg = z < 0
        em = np.expm1(np.minimum(z, 0.0))
        val = np.where(neg, em, z)
        if order == 0:
            return val, None, None
        d1 = em + 1.0
        d1[~neg] = 1.0
        if order == 1:
            return val, d1, None
        d2 = em + 1.0
        d2[~neg] = 0.0
        return val, d1, d2
    if name == "relu":
        pos = z > 0
        return np.where(pos, z, 0.0), pos.astype(float), np.zeros_like(z)
    if name == "linear":
        return z, np.ones_like(z), np.zeros_like(z)
    raise ConfigurationError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def elu(z):
    z = np.asarray(z, dtype=float)
    out = _act("elu", np.atleast_1d(z), order=0)[0]
    return out.reshape(z.shape) if z.ndim else float(out[0])


@dataclass
class NetworkParams:
    """Weights ``W_l`` of shape ``(out, in)`` and biases ``b_l`` of shape ``(out,)``."""

    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "elu"

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.layer_sizes) < 2:
            raise ConfigurationError("need at least input and output sizes")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigurationError("layer sizes must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ConfigurationError("number of weight/bias arrays does not match layer_sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != shape or b.shape != shape[:1]:
                raise ConfigurationError(f"layer {l}: expected weight {shape} and bias {shape[:1]}, "
                                         f"got {w.shape} and {b.shape}")

    @property
    def input_dim(self):
        return self.layer_sizes[0] - 1

    @property
    def output_dim(self):
        return self.layer_sizes[-1]

    @property
    def size(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self):
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def with_flat(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise DomainError(f"expected {self.size} parameters, got shape {theta.shape}")
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(theta[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            bs.append(theta[pos:pos + b.size].copy())
            pos += b.size
        return NetworkParams(list(self.layer_sizes), ws, bs, self.activation)

    def copy(self):
        return self.with_flat(self.flat())

    def zeros_like(self):
        return self.with_flat(np.zeros(self.size))

    # serialisation
    def to_json(self):
        return json.dumps({
            "format_version": FORMAT_VERSION,
            "layer_sizes": self.layer_sizes,
            "activation": self.activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        })

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"parameter file is not valid JSON: {exc}") from None
        if doc.get("format_version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported parameter format_version {doc.get('format_version')!r}")
        try:
            return cls(doc["layer_sizes"], doc["weights"], doc["biases"], doc["activation"])
        except KeyError as exc:
            raise ConfigurationError(f"parameter file lacks field {exc}") from None

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def init_params(layer_sizes: Sequence[int], activation="elu", rng=None) -> NetworkParams:
    """He fan-in uniform initialisation ``U(+-sqrt(6 / fan_in))`` with zero biases."""
    from .stochastic import as_stream

    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 3:
        raise ConfigurationError("the score network needs at least one hidden layer")
    gen = as_stream(0 if rng is None else rng)
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / fan_in)
        ws.append(gen.uniform(-bound, bound, (fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return NetworkParams(sizes, ws, bs, activation)


# ---------------------------------------------------------------------------
# forward / reverse passes


def _inputs(params, t, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (params.input_dim,):
        raise DomainError(f"network expects points of dimension {params.input_dim}, got shape {x.shape}")
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
    lead = x.shape[:-1]
    a0 = np.concatenate([t.reshape(-1, 1), x.reshape(-1, x.shape[-1])], axis=1)
    return a0, lead


@dataclass
class _Tape:
    acts: list = field(default_factory=list)      # layer inputs a_l, (N, in_l)
    pre: list = field(default_factory=list)       # hidden pre-activations z_l
    tang: list = field(default_factory=list)      # tangents of layer inputs, (N, d, in_l)
    tpre: list = field(default_factory=list)      # tangents of hidden pre-activations


def _run(params, a0, jacobian):
    tape = _Tape()
    a = a0
    d = params.input_dim
    at = None
    if jacobian:
        at = np.zeros((a0.shape[0], d, a0.shape[1]))
        at[:, np.arange(d), 1 + np.arange(d)] = 1.0
    L = len(params.weights)
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        tape.acts.append(a)
        tape.tang.append(at)
        z = a @ W.T + b
        zt = at @ W.T if jacobian else None
        if l == L - 1:
            return z, zt, tape
        tape.pre.append(z)
        tape.tpre.append(zt)
        a, da, _ = _act(params.activation, z, 1 if jacobian else 0)
        if jacobian:
            at = da[:, None, :] * zt


def forward(params: NetworkParams, t, x):
    """Score coefficients ``S(t, x)`` of shape ``(..., k)``."""
    a0, lead = _inputs(params, t, x)
    out, _, _ = _run(params, a0, False)
    return out.reshape(lead + (params.output_dim,))


def forward_with_jacobian(params: NetworkParams, t, x):
    """``(S, J)`` with ``J[..., j, i] = d S^j / d x^i`` (time held fixed)."""
    a0, lead = _inputs(params, t, x)
    out, outt, _ = _run(params, a0, True)
    J = np.swapaxes(outt, -1, -2)
    return out.reshape(lead + (params.output_dim,)), J.reshape(lead + J.shape[-2:])


def input_jacobian(params: NetworkParams, t, x):
    """``d S^j / d x^i`` as a ``(..., k, d)`` array."""
    return forward_with_jacobian(params, t, x)[1]


def _backward(params, tape, g_out, g_jac):
    L = len(params.weights)
    gW = [None] * L
    gb = [None] * L
    g_z = g_out
    g_zt = None if g_jac is None else np.swapaxes(g_jac, -1, -2)   # (N, d, k)
    for l in range(L - 1, -1, -1):
        W = params.weights[l]
        a, at = tape.acts[l], tape.tang[l]
        gW[l] = g_z.T @ a
        gb[l] = g_z.sum(axis=0)
        if g_zt is not None:
            gW[l] += np.einsum("ndo,ndi->oi", g_zt, at)
        if l == 0:
            break
        g_a = g_z @ W
        z = tape.pre[l - 1]
        _, da, dda = _act(params.activation, z, 2 if g_zt is not None else 1)
        g_z = da * g_a
        if g_zt is not None:
            g_at = g_zt @ W
            g_z = g_z + dda * np.einsum("ndi,ndi->ni", g_at, tape.tpre[l - 1])
            g_zt = da[:, None, :] * g_at
    return NetworkParams(list(params.layer_sizes), gW, gb, params.activation)


LossClosure = Callable[[np.ndarray, Optional[np.ndarray]], tuple]


def loss_gradient(params: NetworkParams, loss_closure: LossClosure, t, x, jacobian=False, context=None):
    """Value and parameter gradient of a scalar built from network outputs.

    ``loss_closure(S, J)`` receives outputs of shape ``(..., k)`` (and
    Jacobians ``(..., k, d)`` when ``jacobian`` is true, otherwise ``None``)
    and returns ``(loss, dloss/dS, dloss/dJ)``; the last entry may be ``None``.
    Returns ``(loss, grad)`` with ``grad`` a :class:`NetworkParams`.
    """
    a0, lead = _inputs(params, t, x)
    out, outt, tape = _run(params, a0, jacobian)
    S = out.reshape(lead + (params.output_dim,))
    J = np.swapaxes(outt, -1, -2).reshape(lead + (params.output_dim, params.input_dim)) if jacobian else None
    loss, g_S, g_J = loss_closure(S, J)
    if not np.isfinite(loss):
        ctx = context or {}
        raise NonFiniteLossError(ctx.get("iteration", -1), ctx.get("epoch"), ctx.get("batch"))
    g_S = np.asarray(g_S, dtype=float).reshape(-1, params.output_dim)
    if g_J is not None:
        if not jacobian:
            raise DomainError("closure returned a Jacobian gradient but jacobian=False")
        g_J = np.asarray(g_J, dtype=float).reshape(-1, params.output_dim, params.input_dim)
    grad = _backward(params, tape, g_S, g_J)
    return float(loss), grad


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    use_denominator: bool = True

    @classmethod
    def for_params(cls, params, beta1=0.9, beta2=0.999, eps=1e-8, use_denominator=True):
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        n = params.size
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, eps, use_denominator)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.beta1, self.beta2, self.eps,
                         self.use_denominator)


def adam_update(params: NetworkParams, grad, state: AdamState, lr=1e-3):
    """One Adam step; returns new ``(params, state)`` without mutating the inputs.

    With ``beta1 = 0`` and ``use_denominator=False`` this is the plain
    gradient step ``theta - lr * grad``.
    """
    if not lr > 0:
        raise DomainError("learning rate must be positive")
    g = grad.flat() if isinstance(grad, NetworkParams) else np.asarray(grad, dtype=float)
    theta = params.flat()
    if g.shape != theta.shape or state.m.shape != theta.shape:
        raise DomainError("gradient/optimizer state shape does not match parameters")
    step = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    mhat = m / (1 - state.beta1 ** step)
    if state.use_denominator:
        vhat = v / (1 - state.beta2 ** step)
        theta = theta - lr * mhat / (np.sqrt(vhat) + state.eps)
    else:
        theta = theta - lr * mhat
    new_state = AdamState(m, v, step, state.beta1, state.beta2, state.eps, state.use_denominator)
    return params.with_flat(theta), new_state
