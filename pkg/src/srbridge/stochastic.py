"""Random streams, Levy-area approximations and path integrators.

Noise for a batch is drawn path by path from per-path child streams, so a
path's randomness depends only on ``(seed, labels, path index)`` and not on the
batch size or evaluation order.  Integration is then vectorised over the batch.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import geometry as geo
from . import heisenberg as heis
from .errors import ConfigurationError, DivergenceError, DomainError, EvaluationError

MASK64 = (1 << 64) - 1
LEVY_METHODS = ("polynomial", "fourier")
SCHEMES = ("euler", "taylor", "heisenberg_exact")


def _label_hash(*parts):
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Backed by a counter-based Philox generator keyed on both integers, so
    distinct stream ids give independent streams.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not 0 <= int(seed) <= MASK64 or not 0 <= int(stream_id) <= MASK64:
            raise DomainError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = (self.seed << 64) | self.stream_id
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def child(self, *labels) -> "RngStream":
        """Independent stream derived from this stream's id and ``labels``."""
        return RngStream(self.seed, _label_hash(self.stream_id, *labels))

    def normal(self, scale=1.0, size=None):
        return self.generator.normal(0.0, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise DomainError(f"expected an RngStream or integer seed, got {type(rng).__name__}")


# ---------------------------------------------------------------------------
# increments


@dataclass
class StepIncrement:
    """Noise for one or more steps.

    ``dW`` has shape ``(..., k)`` and ``levy`` shape ``(..., k, k)``; ``aux``
    holds the series coefficients (``c`` for the polynomial method, ``a`` and
    ``b`` stacked on a leading axis for Fourier).
    """

    dW: np.ndarray
    levy: np.ndarray
    delta: float
    aux: Optional[np.ndarray] = None


def _check_levy_args(k, delta, K2, method):
    if k < 1:
        raise DomainError("k must be >= 1")
    if not delta > 0:
        raise DomainError("step size must be positive")
    if K2 < 1:
        raise DomainError("K2 must be >= 1")
    if method not in LEVY_METHODS:
        raise ConfigurationError(f"unknown Levy-area method {method!r}; expected one of {LEVY_METHODS}")


def _antisymmetric(upper):
    """Assemble ``(..., k, k)`` from a function giving the ``j < l`` entries."""
    return upper - np.swapaxes(upper, -1, -2)


def levy_polynomial(dW, c):
    """Truncated polynomial expansion; ``c`` has shape ``(..., k, K2)``."""
    k = dW.shape[-1]
    iu = np.triu_indices(k, 1)
    W = dW[..., :, None]
    c1 = c[..., :, 0]
    # first term 1/2 (c_{l,1} W^j - c_{j,1} W^l) for (j, l)
    first = 0.5 * (W * c1[..., None, :] - c1[..., :, None] * dW[..., None, :])
    # second term 1/2 sum_m (c_{j,m} c_{l,m+1} - c_{j,m+1} c_{l,m})
    lo, hi = c[..., :-1], c[..., 1:]
    second = 0.5 * (np.einsum("...jm,...lm->...jl", lo, hi) - np.einsum("...jm,...lm->...jl", hi, lo))
    full = first + second
    upper = np.zeros_like(full)
    upper[..., iu[0], iu[1]] = full[..., iu[0], iu[1]]
    return _antisymmetric(upper)


def levy_fourier(dW, a, b):
    """Truncated Fourier expansion; ``a`` and ``b`` have shape ``(..., k, K2)``."""
    k = dW.shape[-1]
    iu = np.triu_indices(k, 1)
    m = np.arange(1, a.shape[-1] + 1, dtype=float)
    sa = np.sum(a, axis=-1)
    first = dW[..., :, None] * sa[..., None, :] - sa[..., :, None] * dW[..., None, :]
    second = math.pi * (np.einsum("...jm,...lm->...jl", m * a, b) - np.einsum("...jm,...lm->...jl", m * b, a))
    full = first + second
    upper = np.zeros_like(full)
    upper[..., iu[0], iu[1]] = full[..., iu[0], iu[1]]
    return _antisymmetric(upper)


def sample_increments(rng, k, delta, K2=10, method="polynomial", n=None, levy=True):
    """Draw ``n`` step increments (a single one when ``n`` is None).

    Draw order per call: all ``dW`` first, then the series coefficients.
    """
    _check_levy_args(k, delta, K2, method)
    rng = as_stream(rng)
    shape = () if n is None else (int(n),)
    dW = rng.normal(math.sqrt(delta), shape + (k,))
    if not levy:
        return StepIncrement(dW=dW, levy=np.zeros(shape + (k, k)), delta=delta)
    m = np.arange(1, K2 + 1, dtype=float)
    if method == "polynomial":
        c = rng.normal(1.0, shape + (k, K2)) * np.sqrt(delta / (2 * m + 1))
        return StepIncrement(dW=dW, levy=levy_polynomial(dW, c), delta=delta, aux=c)
    scale = np.sqrt(delta / (2 * math.pi ** 2 * m ** 2))
    ab = rng.normal(1.0, (2,) + shape + (k, K2)) * scale
    return StepIncrement(dW=dW, levy=levy_fourier(dW, ab[0], ab[1]), delta=delta, aux=ab)


def sample_increment(rng, k, delta, K2=10, method="polynomial"):
    """One step's Brownian increment and approximate Levy areas."""
    return sample_increments(rng, k, delta, K2, method)


def levy_variance(delta, K2, method="polynomial"):
    """Exact variance of the truncated ``A^{1,2}`` approximation."""
    if method == "polynomial":
        return 0.25 * delta ** 2 * (1.0 - 1.0 / (2 * K2 + 1))
    if method == "fourier":
        return 1.5 * delta ** 2 / math.pi ** 2 * math.fsum(1.0 / m ** 2 for m in range(1, K2 + 1))
    raise ConfigurationError(f"unknown Levy-area method {method!r}")


# ---------------------------------------------------------------------------
# paths


@dataclass
class PathBatch:
    """Paths on a uniform grid with the noise that generated them.

    ``states`` has shape ``(K, n + 1, d)``, ``dW`` shape ``(K, n, k)`` and
    ``levy`` shape ``(K, n, k, k)`` (zeros for the Euler scheme).
    """

    times: np.ndarray
    states: np.ndarray
    dW: np.ndarray
    levy: np.ndarray
    scheme: str
    model_name: str = ""

    @property
    def K(self):
        return self.states.shape[0]

    @property
    def n(self):
        return self.states.shape[1] - 1

    @property
    def delta(self):
        return float(self.times[1] - self.times[0])

    def path(self, i) -> "PathSample":
        return PathSample(self.times, self.states[i], self.dW[i], self.levy[i], self.scheme, self.model_name)

    def permuted(self, order):
        order = np.asarray(order)
        return PathBatch(self.times, self.states[order], self.dW[order], self.levy[order],
                         self.scheme, self.model_name)


@dataclass
class PathSample:
    times: np.ndarray
    states: np.ndarray
    dW: np.ndarray
    levy: np.ndarray
    scheme: str
    model_name: str = ""

    @property
    def increments(self):
        return [StepIncrement(self.dW[i], self.levy[i], float(self.times[1] - self.times[0]))
                for i in range(len(self.dW))]

    def as_batch(self) -> PathBatch:
        return PathBatch(self.times, self.states[None], self.dW[None], self.levy[None],
                         self.scheme, self.model_name)


def time_grid(T, n):
    if not T > 0:
        raise DomainError("T must be positive")
    if n < 1:
        raise DomainError("n must be >= 1")
    return np.arange(n + 1) * (T / n)


def _check_finite_states(x, step):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(step, f"state became non-finite at step {step}")


def euler_step(model, x, dW, delta):
    """``x + sigma(x) dW + tau_0(x) delta``, vectorised over leading axes."""
    s, tau0 = geo.frame_and_ito_drift(model, x)
    return x + np.einsum("...ij,...j->...i", s, dW) + tau0 * delta


def taylor_step(model, x, inc):
    """Order-one stochastic Taylor step for a step-2 model.

    ``x + sum_j sigma_j W^j + 1/2 sum_{j1,j2} (nabla_{sigma_j1} sigma_j2) W^j1 W^j2
    + sum_{j1<j2} [sigma_j1, sigma_j2] A^{j1,j2} + sigma_0 delta``, all fields at ``x``.
    """
    if model.step > 2:
        raise ConfigurationError("the Taylor step supports step-2 models only")
    x = np.asarray(x, dtype=float)
    dW = np.asarray(inc.dW, dtype=float)
    A = np.asarray(inc.levy, dtype=float)
    s = geo.frame_at(model, x)
    C = geo.connection_tensor(model, x)
    sym = 0.5 * np.einsum("...iab,...a,...b->...i", C, dW, dW)
    # sum_{a<b} (C_ab - C_ba) A^{ab} = sum_{a,b} C_ab A^{ab} for antisymmetric A
    area = np.einsum("...iab,...ab->...i", C, A)
    return (x + np.einsum("...ij,...j->...i", s, dW) + sym + area
            + geo.stratonovich_drift(model, x) * inc.delta)


def _draw_batch_noise(rng, K, n, k, delta, K2, method, levy):
    dW = np.empty((K, n, k))
    L = np.zeros((K, n, k, k))
    for p in range(K):
        inc = sample_increments(rng.child("path", p), k, delta, K2, method, n=n, levy=levy)
        dW[p] = inc.dW
        L[p] = inc.levy
    return dW, L


def integrate(model, x0, T, dW, levy, scheme):
    """Run a scheme on pre-drawn noise of shape ``(K, n, k)``; returns ``(K, n + 1, d)`` states."""
    x0 = geo._check_point(model, x0)
    K, n, _ = dW.shape
    delta = T / n
    if scheme == "heisenberg_exact":
        states = heis.heisenberg_path(x0, dW, heis.area_increment(levy))
        _check_finite_states(states, n)
        return states
    states = np.empty((K, n + 1, model.d))
    states[:, 0] = x0
    x = states[:, 0]
    if scheme not in ("euler", "taylor"):
        raise ConfigurationError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    for i in range(n):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                if scheme == "euler":
                    x = euler_step(model, x, dW[:, i], delta)
                else:
                    x = taylor_step(model, x, StepIncrement(dW[:, i], levy[:, i], delta))
        except EvaluationError as exc:
            raise DivergenceError(i + 1, f"step {i + 1} from a finite state failed: {exc}") from None
        _check_finite_states(x, i + 1)
        states[:, i + 1] = x
    return states


def sample_batch(model, x0, T, n, K, rng, scheme="euler", K2=10, method="polynomial"):
    """Simulate ``K`` independent paths; path ``p`` uses ``rng.child("path", p)``."""
    if K < 1:
        raise DomainError("K must be >= 1")
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if scheme == "heisenberg_exact" and not model.name.startswith("heisenberg"):
        raise ConfigurationError("the exact scheme needs a Heisenberg model")
    times = time_grid(T, n)
    rng = as_stream(rng)
    dW, L = _draw_batch_noise(rng, K, n, model.k, T / n, K2, method, levy=scheme != "euler")
    states = integrate(model, x0, T, dW, L, scheme)
    return PathBatch(times, states, dW, L, scheme, model.name)


def euler_maruyama_path(model, x0, T, n, rng):
    """Single Euler-Maruyama path driven by ``rng`` directly."""
    times = time_grid(T, n)
    inc = sample_increments(as_stream(rng), model.k, T / n, n=n, levy=False)
    states = integrate(model, x0, T, inc.dW[None], inc.levy[None], "euler")[0]
    return PathSample(times, states, inc.dW, inc.levy, "euler", model.name)


def heisenberg_group_increments(batch):
    """Group increments ``X_i^{-1} X_{i+1} = (dW_i, sum_j A^{j,k+j}_i)`` of an exact-scheme batch."""
    dA = heis.area_increment(batch.levy)
    return np.concatenate([batch.dW, dA[..., None]], axis=-1)
