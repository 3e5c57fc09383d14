"""Diffusion bridges simulated backwards in time with a score-corrected drift.

A bridge from ``x0`` to ``xT`` is sampled by running the time-reversed process
``Y_t = X_{T-t}`` from ``xT``.  Its generator is ``(1/2) Delta - Z`` plus the
score ``S_{T-t}(x0, .)`` as an extra horizontal drift.  Paths are returned
flipped back to forward time, so they start near ``x0`` and end at ``xT``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import geometry as geo
from . import heisenberg as heis
from .errors import DivergenceError, DomainError, EvaluationError
from .network import NetworkParams, forward
from .stochastic import as_stream, time_grid


# ---------------------------------------------------------------------------
# score sources: callables (tau, x) -> (..., k) frame coefficients of S_tau(x0, x)


class NetworkScore:
    def __init__(self, params: NetworkParams):
        self.params = params

    def __call__(self, tau, x):
        return forward(self.params, tau, x)


class EuclideanScore:
    """Gaussian score ``-(x - x0) / tau`` of Brownian motion started at ``x0``."""

    def __init__(self, x0):
        self.x0 = np.asarray(x0, dtype=float)

    def __call__(self, tau, x):
        tau = np.asarray(tau, dtype=float)
        return -(np.asarray(x, dtype=float) - self.x0) / tau[..., None]


class HeisenbergScore:
    """Surrogate score ``S_hat_tau(x0^{-1} x)`` on the Heisenberg group."""

    def __init__(self, x0, vertical_scale=heis.FOUR_PI):
        self.x0 = np.asarray(x0, dtype=float)
        self.vertical_scale = vertical_scale

    def __call__(self, tau, x):
        return heis.score_hat(heis.group_mul(heis.group_inv(self.x0), x), tau, self.vertical_scale)


class ZeroScore:
    def __init__(self, k):
        self.k = k

    def __call__(self, tau, x):
        return np.zeros(np.shape(x)[:-1] + (self.k,))


def reverse_bridge_drift(model, score, t, x, T, ito=False):
    """Drift of the reversed bridge at reverse time ``t``.

    Stratonovich form ``(1/2) sum_j (div sigma_j) sigma_j - Z + sigma s`` with
    ``s = score(T - t, x)``; the Ito form adds ``(1/2) sum_j nabla_{sigma_j} sigma_j``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t >= T):
        raise DomainError("reverse time must be smaller than T")
    x = geo._check_point(model, x)
    s = geo.frame_at(model, x)
    coef = np.asarray(score(np.broadcast_to(T - t, x.shape[:-1]), x), dtype=float)
    if not np.all(np.isfinite(coef)):
        raise EvaluationError("score evaluated to a non-finite value")
    div = geo.frame_divergence(model, x)
    drift = 0.5 * np.einsum("...ij,...j->...i", s, div) - geo.drift_at(model, x) \
        + np.einsum("...ij,...j->...i", s, coef)
    if ito:
        drift = drift + 0.5 * np.einsum("...ijj->...i", geo.connection_tensor(model, x))
    return drift


@dataclass
class BridgeConfig:
    x0: np.ndarray
    xT: np.ndarray
    T: float
    n: int
    num_samples: int

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.xT = np.asarray(self.xT, dtype=float)
        if not self.T > 0 or self.n < 1 or self.num_samples < 1:
            raise DomainError("T, n and num_samples must be positive")


@dataclass
class BridgeEnsemble:
    """Bridge paths in forward time, shape ``(N, n + 1, d)``, with summary curves."""

    times: np.ndarray
    paths: np.ndarray
    summary: dict = field(default_factory=dict)

    def flipped(self):
        """Reverse the time direction of every path (the grid is symmetric)."""
        return BridgeEnsemble(self.times, self.paths[:, ::-1], self.summary)


def sample_bridge(model, config: BridgeConfig, score: Callable, rng) -> BridgeEnsemble:
    """Euler-Maruyama for the reversed bridge from ``xT``, flipped to forward time.

    Path ``p`` uses noise from ``rng.child("bridge", p)``.  The drift time is
    ``min(t_i, T - delta/2)``; with left-point evaluation the last drift time
    is ``T - delta`` so the clamp only guards rounding.
    """
    rng = as_stream(rng)
    geo._check_point(model, config.x0)
    y0 = geo._check_point(model, config.xT)
    T, n, N = config.T, config.n, config.num_samples
    times = time_grid(T, n)
    delta = T / n
    dW = np.empty((N, n, model.k))
    for p in range(N):
        dW[p] = rng.child("bridge", p).normal(np.sqrt(delta), (n, model.k))
    ys = np.empty((N, n + 1, model.d))
    ys[:, 0] = y0
    y = ys[:, 0]
    for i in range(n):
        t = min(times[i], T - 0.5 * delta)
        drift = reverse_bridge_drift(model, score, np.full(N, t), y, T, ito=True)
        y = y + drift * delta + np.einsum("...ij,...j->...i", geo.frame_at(model, y), dW[:, i])
        if not np.all(np.isfinite(y)):
            raise DivergenceError(i + 1, f"bridge path diverged at step {i + 1}")
        ys[:, i + 1] = y
    paths = ys[:, ::-1]
    return BridgeEnsemble(times, paths, ensemble_stats(model, paths))


def path_statistics(model, paths):
    """Per-point statistics: ``|(x, y)|`` and ``z`` on Heisenberg, else group norms.

    Returns a dict name -> array of shape ``paths.shape[:-1]``.
    """
    paths = np.asarray(paths, dtype=float)
    h = np.linalg.norm(paths[..., :model.k], axis=-1)
    if model.name.startswith("heisenberg"):
        return {"horizontal_norm": h, "z": paths[..., -1]}
    if model.d == model.k:
        return {"norm": h}
    return {"horizontal_norm": h, "vertical_norm": np.linalg.norm(paths[..., model.k:], axis=-1)}


def ensemble_stats(model, paths):
    """Pointwise 25/50/75 percentiles (linear interpolation) of each path statistic."""
    paths = np.asarray(paths, dtype=float)
    if paths.ndim != 3 or paths.shape[0] == 0:
        raise DomainError("ensemble must be a nonempty (N, n+1, d) array")
    out = {}
    for name, vals in path_statistics(model, paths).items():
        q = np.percentile(vals, [25, 50, 75], axis=0, method="linear")
        out[name] = {"q25": q[0], "median": q[1], "q75": q[2]}
    return out
