"""Score-matching losses on sampled path batches.

Every loss is assembled from a *closure* over network outputs: given the
scores ``S`` (and input Jacobians ``J`` where needed) at the evaluation
points, it returns the loss and its partial derivatives with respect to ``S``
and ``J``.  The same closure drives loss evaluation, reverse-mode training
and gradients for hand-written score families.

Conventions: a batch holds ``K`` paths with ``n`` steps of size ``delta``.
The score is evaluated at the post-step state ``X_i`` with time ``i delta``,
``i = 1..n``, and paired with the noise of the step ``(t_{i-1}, t_i]``.
Losses are reduced per path first and then across paths with an exactly
rounded sum, so reordering the paths of a batch leaves the value unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import geometry as geo
from . import heisenberg as heis
from .errors import ConfigurationError, DomainError
from .network import NetworkParams, forward_with_jacobian, loss_gradient

LOSS_KINDS = ("divergence", "denoising_euclidean", "denoising_heisenberg", "denoising_general")


def _reduce(per_elem, K):
    """Sum ``(K, n)`` contributions path by path, then exactly across paths."""
    per_path = np.sum(per_elem.reshape(K, -1), axis=1)
    return math.fsum(per_path.tolist())


@dataclass
class LossProblem:
    """Evaluation points plus a closure ``(S, J) -> (loss, dS, dJ)``."""

    t: np.ndarray
    x: np.ndarray
    closure: Callable
    jacobian: bool


def _check_batch(batch):
    if batch.K < 1 or batch.n < 1:
        raise DomainError("empty batch")


def _eval_points(batch):
    _check_batch(batch)
    t = np.broadcast_to(batch.times[1:], (batch.K, batch.n))
    return t, batch.states[:, 1:]


# ---------------------------------------------------------------------------
# divergence loss


def divergence_problem(model, batch):
    """``(delta/K) sum [ |S|^2 + 2 (sum_j S^j div sigma_j + sum_ij sigma^i_j dS^j/dx^i) ]``."""
    t, x = _eval_points(batch)
    K, delta = batch.K, batch.delta
    sig = geo.frame_at(model, x)                 # (K, n, d, k)
    div = geo.frame_divergence(model, x)         # (K, n, k)
    w = delta / K

    def closure(S, J):
        if J is None:
            raise ConfigurationError("the divergence loss needs input Jacobians")
        tr = np.einsum("...ji,...ij->...", J, sig)
        elem = np.sum(S * S, axis=-1) + 2.0 * (np.sum(S * div, axis=-1) + tr)
        loss = w * _reduce(elem, K)
        return loss, w * (2 * S + 2 * div), w * 2.0 * np.swapaxes(sig, -1, -2)

    return LossProblem(t, x, closure, True)


def _score_fn(score):
    """Normalise a score source to ``f(t, x) -> (S, J)``."""
    if isinstance(score, NetworkParams):
        if score.activation == "relu":
            raise ConfigurationError("divergence terms need a differentiable activation; relu is not")
        return lambda t, x: forward_with_jacobian(score, t, x)
    return score


def divergence_of_score(model, score, t, x):
    """``sum_j sum_i (S^j d_i sigma^i_j + sigma^i_j d_i S^j)`` at ``(t, x)``.

    ``score`` is a network or a callable ``(t, x) -> (S, J)`` with
    ``J[..., j, i] = dS^j/dx^i``.
    """
    x = geo._check_point(model, x)
    S, J = _score_fn(score)(t, x)
    sig = geo.frame_at(model, x)
    div = geo.frame_divergence(model, x)
    return np.sum(S * div, axis=-1) + np.einsum("...ji,...ij->...", J, sig)


# ---------------------------------------------------------------------------
# denoising losses


def euclidean_denoising_problem(model, batch, form=1):
    """``(1/K) sum <S, delta S + 2 dW>`` (form 1) or ``(delta/K) sum |S + dW/delta|^2`` (form 2)."""
    t, x = _eval_points(batch)
    if batch.dW is None:
        raise DomainError("batch carries no Brownian increments")
    K, delta, dW = batch.K, batch.delta, batch.dW
    return _target_problem(t, x, K, delta, -dW, form)


def _target_problem(t, x, K, delta, target, form):
    """Shared quadratic form with per-step target ``T_i``: ``<S, delta S - 2 T>`` or ``delta |S - T/delta|^2``."""
    if form not in (1, 2):
        raise DomainError("form must be 1 or 2")

    def closure(S, J):
        if form == 1:
            elem = np.sum(S * (delta * S - 2 * target), axis=-1)
            loss = _reduce(elem, K) / K
        else:
            r = S - target / delta
            elem = np.sum(r * r, axis=-1)
            loss = delta * _reduce(elem, K) / K
        return loss, (2 * delta * S - 2 * target) / K, None

    return LossProblem(t, x, closure, False)


def heisenberg_denoising_problem(batch, form=1, vertical_scale=heis.FOUR_PI):
    """Target ``S_hat(Delta_i)`` built from the group increment of each step."""
    if not batch.model_name.startswith("heisenberg"):
        raise ConfigurationError("the Heisenberg denoising loss needs a Heisenberg batch")
    from .stochastic import heisenberg_group_increments

    t, x = _eval_points(batch)
    if batch.scheme == "heisenberg_exact":
        inc = heisenberg_group_increments(batch)
    else:
        inc = heis.group_mul(heis.group_inv(batch.states[:, :-1]), batch.states[:, 1:])
    target = heis.score_hat_unscaled(inc, vertical_scale)
    return _target_problem(t, x, batch.K, batch.delta, target, form)


def general_denoising_problem(model, batch, scales=None, form=1):
    """Target ``delta * S_hat_delta(X_{i-1}, X_i)`` from an adapted chart recentred at each step."""
    if model.step > 2:
        raise ConfigurationError("the general denoising loss supports step-2 models only")
    t, x = _eval_points(batch)
    chart = geo.adapted_chart(model, batch.states[:, :-1])
    delta = batch.delta
    target = delta * geo.approx_score(model, chart, x, np.full(x.shape[:-1], delta), scales)
    return _target_problem(t, x, batch.K, delta, target, form)


def make_problem(kind, model, batch, **kw):
    if kind == "divergence":
        return divergence_problem(model, batch)
    if kind == "denoising_euclidean":
        return euclidean_denoising_problem(model, batch, **kw)
    if kind == "denoising_heisenberg":
        return heisenberg_denoising_problem(batch, **kw)
    if kind == "denoising_general":
        return general_denoising_problem(model, batch, **kw)
    raise ConfigurationError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def evaluate(problem: LossProblem, score):
    """Loss value for a network or a callable ``(t, x) -> (S, J)``."""
    if isinstance(score, NetworkParams):
        if problem.jacobian:
            S, J = _score_fn(score)(problem.t, problem.x)
        else:
            from .network import forward
            S, J = forward(score, problem.t, problem.x), None
    else:
        S, J = score(problem.t, problem.x)
    return problem.closure(S, J)[0]


def value_and_grad(problem: LossProblem, params: NetworkParams, context=None):
    if problem.jacobian and params.activation == "relu":
        raise ConfigurationError("divergence terms need a differentiable activation; relu is not")
    return loss_gradient(params, problem.closure, problem.t, problem.x, problem.jacobian, context)


# convenience wrappers


def divergence_loss(model, params, batch):
    return evaluate(divergence_problem(model, batch), params)


def denoising_loss_euclideanized(model, params, batch, form=1):
    return evaluate(euclidean_denoising_problem(model, batch, form), params)


def heisenberg_denoising_loss(params, batch, form=1, vertical_scale=heis.FOUR_PI):
    return evaluate(heisenberg_denoising_problem(batch, form, vertical_scale), params)


def general_denoising_loss(model, params, batch, scales=None, form=1):
    return evaluate(general_denoising_problem(model, batch, scales, form), params)
