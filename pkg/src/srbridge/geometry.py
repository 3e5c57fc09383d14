"""Sub-Riemannian models in local coordinates.

A model is described by a horizontal frame ``sigma`` (a ``d x k`` matrix field
whose columns are orthonormal for the sub-Riemannian metric), a complementary
frame extension spanning the remaining directions, and a drift ``Z`` such that
the diffusion has generator ``(1/2) Delta + Z``.

All functions are vectorised over leading axes: a point array of shape
``(..., d)`` yields frames of shape ``(..., d, k)`` and so on.  Frame indices
are zero-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, ConfigurationError, EvaluationError, SingularFrameError

ArrayFn = Callable[[np.ndarray], np.ndarray]

DEFAULT_FD_STEP = 1e-5
SINGULAR_DET = 1e-12


@dataclass(frozen=True)
class SubRiemannianModel:
    """Geometry and drift of a hypoelliptic diffusion in a coordinate chart.

    Parameters
    ----------
    d, k : int
        Coordinate dimension and rank of the horizontal bundle.
    frame : callable
        ``x (..., d) -> (..., d, k)``; column ``j`` holds the coordinates
        ``sigma^i_j`` of the horizontal field ``sigma_j``.
    frame_extension : callable
        ``x (..., d) -> (..., d, d - k)`` completing ``frame`` to a frame of TM.
    drift_z : callable, optional
        ``x (..., d) -> (..., d)``, the field ``Z``; zero when omitted.
    weights : sequence of int, optional
        Adapted-coordinate weights, 1 for the first ``k`` coordinates and 2 for
        the rest.  Only step-2 structures are supported.
    fd_step : float
        Central finite-difference step used for derivatives of frame entries.
    frame_jacobian : callable, optional
        Analytic ``x -> (..., d, k, d)`` array ``D[..., i, j, l] = d sigma^i_j / dx^l``.
        Takes precedence over finite differences.
    """

    d: int
    k: int
    frame: ArrayFn
    frame_extension: ArrayFn
    drift_z: Optional[ArrayFn] = None
    weights: Optional[Sequence[int]] = None
    fd_step: float = DEFAULT_FD_STEP
    frame_jacobian: Optional[ArrayFn] = None
    name: str = "custom"
    nu: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 1 or self.k < 1 or self.k > self.d:
            raise ConfigurationError(f"need 1 <= k <= d, got d={self.d}, k={self.k}")
        if self.fd_step <= 0:
            raise ConfigurationError("fd_step must be positive")
        nu = (1,) * self.k + (2,) * (self.d - self.k) if self.weights is None else tuple(self.weights)
        if len(nu) != self.d:
            raise ConfigurationError(f"expected {self.d} weights, got {len(nu)}")
        if any(w not in (1, 2) for w in nu):
            raise ConfigurationError(f"only step-2 structures are supported, got weights {nu}")
        if any(a > b for a, b in zip(nu, nu[1:])) or any(w != 1 for w in nu[: self.k]) \
                or any(w != 2 for w in nu[self.k:]):
            raise ConfigurationError(f"weights must be 1 for the first k={self.k} coordinates and 2 after, got {nu}")
        object.__setattr__(self, "weights", nu)
        object.__setattr__(self, "nu", np.asarray(nu))

    @property
    def step(self):
        return int(self.nu.max())


def _check_point(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.d,):
        raise DomainError(f"expected points with trailing dimension {model.d}, got shape {x.shape}")
    return x


def _finite(name, value):
    if not np.all(np.isfinite(value)):
        raise EvaluationError(f"{name} evaluated to a non-finite value")
    return value


def frame_at(model, x):
    """Horizontal frame matrix, shape ``(..., d, k)``."""
    x = _check_point(model, x)
    s = np.asarray(model.frame(x), dtype=float)
    if s.shape != x.shape + (model.k,):
        raise DomainError(f"frame returned shape {s.shape}, expected {x.shape + (model.k,)}")
    return _finite("frame", s)


def full_frame(model, x):
    """``[frame | frame_extension]`` as a ``(..., d, d)`` matrix."""
    x = _check_point(model, x)
    s = frame_at(model, x)
    if model.d == model.k:
        return s
    ext = _finite("frame extension", np.asarray(model.frame_extension(x), dtype=float))
    if ext.shape != x.shape + (model.d - model.k,):
        raise DomainError(f"frame_extension returned shape {ext.shape}")
    return np.concatenate([s, ext], axis=-1)


def drift_at(model, x):
    x = _check_point(model, x)
    if model.drift_z is None:
        return np.zeros_like(x)
    z = np.broadcast_to(np.asarray(model.drift_z(x), dtype=float), x.shape)
    return _finite("drift", z)


def frame_derivative(model, x):
    """``D[..., i, j, l] = d sigma^i_j / d x^l``, shape ``(..., d, k, d)``."""
    x = _check_point(model, x)
    if model.frame_jacobian is not None:
        return _finite("frame jacobian", np.asarray(model.frame_jacobian(x), dtype=float))
    h = model.fd_step
    cols = []
    for l in range(model.d):
        e = np.zeros(model.d)
        e[l] = h
        cols.append((frame_at(model, x + e) - frame_at(model, x - e)) / (2.0 * h))
    return np.stack(cols, axis=-1)


def connection_tensor(model, x):
    """All flat connections at once.

    ``C[..., i, a, b]`` is the ``i``-th coordinate of ``nabla_{sigma_a} sigma_b``.
    """
    s = frame_at(model, x)
    D = frame_derivative(model, x)
    return np.einsum("...ibl,...la->...iab", D, s)


def frame_divergence(model, x):
    """Euclidean divergence of each horizontal field, shape ``(..., k)``."""
    D = frame_derivative(model, x)
    return np.einsum("...iji->...j", D)


def _check_index(model, j):
    if not 0 <= j < model.k:
        raise DomainError(f"frame index {j} out of range for k={model.k}")


def flat_connection(model, j1, j2, x):
    """Flat connection ``nabla_{sigma_j1} sigma_j2`` in coordinates."""
    _check_index(model, j1)
    _check_index(model, j2)
    s = frame_at(model, x)
    D = frame_derivative(model, x)
    return np.einsum("...il,...l->...i", D[..., :, j2, :], s[..., :, j1])


def lie_bracket(model, j1, j2, x):
    """Lie bracket ``[sigma_j1, sigma_j2]``; antisymmetric by construction."""
    return flat_connection(model, j1, j2, x) - flat_connection(model, j2, j1, x)


def stratonovich_drift(model, x):
    """``sigma_0 = (1/2) sum_j (div sigma_j) sigma_j + Z``.

    Generator convention: the Stratonovich SDE driven by ``sigma_0`` has
    generator ``(1/2) Delta + Z`` with Delta the sub-Laplacian for Lebesgue
    measure in these coordinates.
    """
    s = frame_at(model, x)
    div = frame_divergence(model, x)
    return 0.5 * np.einsum("...ij,...j->...i", s, div) + drift_at(model, x)


def ito_drift(model, x):
    """``tau_0 = sigma_0 + (1/2) sum_j nabla_{sigma_j} sigma_j``."""
    return frame_and_ito_drift(model, x)[1]


def frame_and_ito_drift(model, x):
    """``(sigma(x), tau_0(x))`` sharing one frame and one derivative evaluation."""
    s = frame_at(model, x)
    D = frame_derivative(model, x)
    div = np.einsum("...iji->...j", D)
    corr = np.einsum("...ijl,...lj->...i", D, s)
    tau0 = 0.5 * np.einsum("...ij,...j->...i", s, div) + drift_at(model, x) + 0.5 * corr
    return s, tau0


@dataclass(frozen=True)
class AdaptedChart:
    """Linear adapted coordinates ``y = inverse_frame @ (x - base)``.

    ``base`` may carry leading batch axes, in which case one chart per base
    point is represented and ``inverse_frame`` has shape ``(..., d, d)``.
    """

    base: np.ndarray
    inverse_frame: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...il,...l->...i", self.inverse_frame, x - self.base)


def adapted_chart(model, x0):
    """Adapted chart centred at ``x0`` built from the inverse full frame there."""
    x0 = _check_point(model, x0)
    F = full_frame(model, x0)
    det = np.linalg.det(F)
    if np.any(np.abs(det) < SINGULAR_DET):
        raise SingularFrameError(f"full frame is singular at base point (|det| = {np.min(np.abs(det)):.3g})")
    return AdaptedChart(base=x0.copy(), inverse_frame=np.linalg.inv(F))


def _scales(model, scales):
    if scales is None:
        return np.ones(model.d)
    c = np.asarray(scales, dtype=float)
    if c.shape != (model.d,) or np.any(c <= 0):
        raise DomainError("scales must be d positive constants")
    return c


def dhat_squared(model, chart, x, scales=None):
    """Box-metric surrogate ``sum_{nu=1} c y^2 + sum_{nu=2} c |y|`` for the squared distance."""
    c = _scales(model, scales)
    y = chart(_check_point(model, x))
    horiz = model.nu == 1
    return (np.sum(c[horiz] * y[..., horiz] ** 2, axis=-1)
            + np.sum(c[~horiz] * np.abs(y[..., ~horiz]), axis=-1))


def approx_score(model, chart, x, t, scales=None):
    """Frame coefficients of ``-(1/2t) grad^E dhat(x0, x)^2``.

    Returns an array of shape ``(..., k)``.  ``sgn(0)`` is taken as 0, so the
    vertical contribution vanishes on the hyperplanes ``y^i = 0``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("score time must be positive")
    c = _scales(model, scales)
    x = _check_point(model, x)
    y = chart(x)
    # sy[..., i, j] = sigma_j(y^i)(x)
    sy = np.einsum("...il,...lj->...ij", chart.inverse_frame, frame_at(model, x))
    horiz = model.nu == 1
    lin = np.einsum("...ij,...i->...j", sy[..., horiz, :], c[horiz] * y[..., horiz])
    sgn = np.einsum("...ij,...i->...j", sy[..., ~horiz, :], c[~horiz] * np.sign(y[..., ~horiz]))
    return -(lin / t[..., None]) - sgn / (2.0 * t[..., None])


def euclidean_model(d, drift=None):
    """Flat R^d with the identity frame (``k = d``).

    ``drift`` may be a callable or a constant vector.
    """
    if drift is not None and not callable(drift):
        c = np.asarray(drift, dtype=float)
        drift = lambda x, c=c: np.broadcast_to(c, np.shape(x))  # noqa: E731

    def frame(x):
        return np.broadcast_to(np.eye(d), np.shape(x) + (d,)).copy()

    def extension(x):
        return np.zeros(np.shape(x) + (0,))

    def jac(x):
        return np.zeros(np.shape(x) + (d, d))

    return SubRiemannianModel(d=d, k=d, frame=frame, frame_extension=extension, drift_z=drift,
                              frame_jacobian=jac, name="euclidean")


def validate_frame(model, points):
    """Raise :class:`SingularFrameError` if the full frame is singular at any of ``points``."""
    F = full_frame(model, points)
    det = np.abs(np.linalg.det(F))
    if np.any(det < SINGULAR_DET):
        raise SingularFrameError(f"full frame singular (|det| = {det.min():.3g})")
    return det
