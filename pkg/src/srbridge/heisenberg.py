"""The (2k+1)-dimensional Heisenberg group.

Points are arrays ``q = (x_1..x_k, y_1..y_k, z)`` of length ``2k + 1`` with
optional leading batch axes.  The horizontal frame is ordered
``(sigma_1, ..., sigma_k, tau_1, ..., tau_k)`` with

    sigma_j = d/dx_j - (y_j / 2) d/dz,    tau_j = d/dy_j + (x_j / 2) d/dz,

and the group law is
``(x~, y~, z~) . (x, y, z) = (x~ + x, y~ + y, z~ + z + (<x~, y> - <x, y~>) / 2)``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, NoConvergenceError
from .geometry import SubRiemannianModel

FOUR_PI = 4.0 * math.pi


def _k_of(q):
    d = np.shape(q)[-1]
    if d < 3 or d % 2 == 0:
        raise DomainError(f"Heisenberg points have odd dimension 2k+1 >= 3, got {d}")
    return (d - 1) // 2


def _split(q):
    q = np.asarray(q, dtype=float)
    k = _k_of(q)
    return q[..., :k], q[..., k:2 * k], q[..., 2 * k]


def heis_point(x, y, z):
    """Assemble a point from its ``x``, ``y`` (length k) and ``z`` parts."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise DomainError("x and y parts must have the same shape")
    z = np.asarray(z, dtype=float)[..., None]
    return np.concatenate([x, y, np.broadcast_to(z, x.shape[:-1] + (1,))], axis=-1)


def identity(k):
    return np.zeros(2 * k + 1)


def group_mul(qt, q):
    """Left translation ``qt . q``."""
    qt = np.asarray(qt, dtype=float)
    q = np.asarray(q, dtype=float)
    if qt.shape[-1] != q.shape[-1]:
        raise DomainError(f"dimension mismatch: {qt.shape[-1]} vs {q.shape[-1]}")
    xt, yt, zt = _split(qt)
    x, y, z = _split(q)
    zz = zt + z + 0.5 * (np.sum(xt * y, axis=-1) - np.sum(x * yt, axis=-1))
    return np.concatenate([xt + x, yt + y, zz[..., None]], axis=-1)


def group_inv(q):
    return -np.asarray(q, dtype=float)


def frames(q):
    """Horizontal frame at ``q``, shape ``(..., 2k+1, 2k)``."""
    x, y, _ = _split(q)
    k = x.shape[-1]
    out = np.zeros(x.shape[:-1] + (2 * k + 1, 2 * k))
    idx = np.arange(k)
    out[..., idx, idx] = 1.0
    out[..., k + idx, k + idx] = 1.0
    out[..., 2 * k, :k] = -0.5 * y
    out[..., 2 * k, k:] = 0.5 * x
    return out


def _frame_jacobian(q):
    x, _, _ = _split(q)
    k = x.shape[-1]
    d = 2 * k + 1
    D = np.zeros(x.shape[:-1] + (d, 2 * k, d))
    idx = np.arange(k)
    D[..., 2 * k, idx, k + idx] = -0.5
    D[..., 2 * k, k + idx, idx] = 0.5
    return D


def _vertical(q):
    q = np.asarray(q, dtype=float)
    e = np.zeros(q.shape[:-1] + (q.shape[-1], 1))
    e[..., -1, 0] = 1.0
    return e


def heisenberg_model(k=1):
    """The Heisenberg group as a :class:`SubRiemannianModel` (no drift, analytic derivatives)."""
    if k < 1:
        raise DomainError("k must be >= 1")
    return SubRiemannianModel(d=2 * k + 1, k=2 * k, frame=frames, frame_extension=_vertical,
                              frame_jacobian=_frame_jacobian, name=f"heisenberg{k}")


def fhat_squared(q, vertical_scale=FOUR_PI):
    """``|x|^2 + |y|^2 + c |z|`` with ``c = 4 pi`` matching the distance along both axes."""
    x, y, z = _split(q)
    return np.sum(x * x, axis=-1) + np.sum(y * y, axis=-1) + vertical_scale * np.abs(z)


def score_hat_unscaled(q, vertical_scale=FOUR_PI):
    """``t * S_hat_t(q)``: the time-free score surrogate ``-[(x; y) + (c/4) sgn(z) (-y; x)]``."""
    x, y, z = _split(q)
    a = 0.25 * vertical_scale * np.sign(z)[..., None]
    return -np.concatenate([x - a * y, y + a * x], axis=-1)


def score_hat(q, t, vertical_scale=FOUR_PI):
    """Frame coefficients of ``-(1/2t) grad^E fhat^2`` at ``q`` (base point the identity).

    For a base point ``qt`` pass ``group_mul(group_inv(qt), q)``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("score time must be positive")
    return score_hat_unscaled(q, vertical_scale) / t[..., None]


def heis_step(q, dW, dA):
    """One exact-in-law step ``q . (dW, dA)`` where ``dA = sum_j A^{j, k+j}``."""
    q = np.asarray(q, dtype=float)
    dW = np.asarray(dW, dtype=float)
    k = _k_of(q)
    if dW.shape[-1] != 2 * k:
        raise DomainError(f"expected {2 * k} Brownian increments, got {dW.shape[-1]}")
    dA = np.asarray(dA, dtype=float)
    inc = np.concatenate([dW, np.broadcast_to(dA[..., None], dW.shape[:-1] + (1,))], axis=-1)
    return group_mul(q, inc)


def area_increment(levy):
    """Sum ``A^{j, k+j}`` over ``j`` from a ``(..., 2k, 2k)`` Levy-area matrix."""
    k = levy.shape[-1] // 2
    idx = np.arange(k)
    return np.sum(levy[..., idx, k + idx], axis=-1)


def heisenberg_path(x0, dW, dA):
    """Compose steps ``X_{i+1} = X_i . (dW_i, dA_i)`` for whole batches.

    ``dW`` has shape ``(..., n, 2k)`` and ``dA`` shape ``(..., n)``; returns
    states of shape ``(..., n + 1, 2k + 1)``.  The recursion is unrolled with
    cumulative sums, which agrees with repeated :func:`heis_step` up to
    rounding.
    """
    x0 = np.asarray(x0, dtype=float)
    k = _k_of(x0)
    dW = np.asarray(dW, dtype=float)
    lead = dW.shape[:-2]
    n = dW.shape[-2]
    h0 = np.broadcast_to(x0[..., :2 * k], lead + (2 * k,))
    h = np.concatenate([h0[..., None, :], h0[..., None, :] + np.cumsum(dW, axis=-2)], axis=-2)
    xp, yp = h[..., :-1, :k], h[..., :-1, k:]
    dx, dy = dW[..., :k], dW[..., k:]
    dz = dA + 0.5 * (np.sum(xp * dy, axis=-1) - np.sum(dx * yp, axis=-1))
    z0 = np.broadcast_to(x0[..., 2 * k], lead)
    z = np.concatenate([z0[..., None], z0[..., None] + np.cumsum(dz, axis=-1)], axis=-1)
    states = np.concatenate([h, z[..., None]], axis=-1)
    assert states.shape == lead + (n + 1, 2 * k + 1)
    return states


# ---------------------------------------------------------------------------
# heat kernel


def _shift_derivative(eta, r2, az, t, k):
    """d/d eta of the log-integrand evaluated at lambda = i eta (real)."""
    small = eta < 1e-4
    e = np.where(small, 1.0, eta)
    c = 1.0 / np.tan(2 * e)
    s2 = np.sin(2 * e) ** 2
    g_r = np.where(small, -4.0 * eta / 3.0, c - 2 * e / s2)
    g_k = np.where(small, 4.0 * eta / 3.0, 1.0 / e - 2 * c)
    return -4.0 * az / t - r2 / t * g_r + k * g_k


def _log_integrand_on_axis(eta, r2, az, t, k):
    small = eta < 1e-4
    e = np.where(small, 1.0, eta)
    ecot = np.where(small, 0.5 - (2.0 / 3.0) * eta ** 2, e / np.tan(2 * e))
    lratio = np.where(small, (2.0 / 3.0) * eta ** 2, np.log(2 * e / np.sin(2 * e)))
    return -4.0 * eta * az / t - ecot * r2 / t + k * lratio


def _saddle_shift(r2, az, t, k, iters=80):
    """Imaginary shift of the integration line through the saddle point.

    The integrand is analytic in ``|Im lambda| < pi/2``; moving the contour to
    ``Im lambda = eta`` where the integrand is smallest along the imaginary
    axis removes the cancellation that makes the real-axis integral useless
    once ``|z|/t`` is large.
    """
    lo = np.zeros_like(r2)
    hi = np.full_like(r2, 0.5 * math.pi * (1 - 1e-12))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        neg = _shift_derivative(mid, r2, az, t, k) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    eta = np.where(az > 0, 0.5 * (lo + hi), 0.0)
    h = 1e-6 * np.maximum(eta, 1e-3)
    curv = (_shift_derivative(eta + h, r2, az, t, k) - _shift_derivative(np.maximum(eta - h, 0), r2, az, t, k)) \
        / (eta + h - np.maximum(eta - h, 0))
    width = np.minimum(1.0, 1.0 / np.sqrt(np.maximum(curv, 1e-300)))
    return eta, width


def _log_integrand(lam, r2, az, t, k):
    # even part evaluated on Re >= 0 to avoid overflow in sinh/coth
    mu = np.where(lam.real < 0, -lam, lam)
    tiny = np.abs(mu) < 1e-12
    m = np.where(tiny, 1.0, mu)
    em = -np.expm1(-4 * m)            # 1 - exp(-4 mu)
    ratio_log = np.log(4 * m) - 2 * m - np.log(em)           # log(2mu / sinh 2mu)
    mcoth = m * (2.0 - em) / em                              # mu coth(2 mu)
    ratio_log = np.where(tiny, 0.0, ratio_log)
    mcoth = np.where(tiny, 0.5, mcoth)
    return k * ratio_log + 4j * lam * az / t - mcoth * r2 / t


def log_heat_kernel(q, t, lam_max=None, n_quad=2001):
    """Natural log of the heat kernel ``p_t(0, q)`` of ``(1/2) Delta``.

    Returns ``-inf`` where the quadrature yields a non-positive value.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    if n_quad < 8:
        raise DomainError("n_quad must be at least 8")
    if lam_max is None:
        lam_max = min(40.0 / t, 400.0)
    x, y, z = _split(q)
    k = x.shape[-1]
    r2 = np.sum(x * x, axis=-1) + np.sum(y * y, axis=-1)
    az = np.abs(z)
    r2, az = np.broadcast_arrays(np.atleast_1d(r2), np.atleast_1d(az))
    eta, width = _saddle_shift(r2, az, t, k)
    peak = _log_integrand_on_axis(eta, r2, az, t, k)

    out = np.empty(r2.shape)
    flat = [a.reshape(-1) for a in (r2, az, eta, width, peak)]
    res = out.reshape(-1)
    u01 = np.linspace(-1.0, 1.0, n_quad)
    chunk = max(1, 2_000_000 // n_quad)
    for s0 in range(0, res.size, chunk):
        sl = slice(s0, s0 + chunk)
        r2c, azc, etac, wc, pc = (a[sl, None] for a in flat)
        U = np.arcsinh(lam_max / wc)
        u = u01 * U
        s = wc * np.sinh(u)
        jac = wc * np.cosh(u) * U * (2.0 / (n_quad - 1))
        jac[:, [0, -1]] *= 0.5
        lam = s + 1j * etac
        g = np.exp(_log_integrand(lam, r2c, azc, t, k) - pc)
        val = np.sum(g.real * jac, axis=-1)
        with np.errstate(divide="ignore"):
            res[sl] = np.where(val > 0, np.log(np.maximum(val, 1e-300)) + pc[:, 0], -np.inf)
    log_norm = math.log(4.0) - (k + 1) * math.log(2 * math.pi * t)
    out = out + log_norm
    return out.reshape(np.shape(z)) if np.ndim(z) else out[0]


def heat_kernel(q, t, lam_max=None, n_quad=2001):
    """Heat kernel ``p_t(0, q)`` by quadrature of the Gaveau integral.

    The integration line is shifted into the complex plane through the saddle
    point and discretised by the trapezoid rule in a sinh-stretched variable;
    ``lam_max`` bounds the real part of the line and ``n_quad`` is the node
    count.  The result is clamped below at 0.
    """
    return np.exp(log_heat_kernel(q, t, lam_max, n_quad))


# ---------------------------------------------------------------------------
# geodesics


def _phi_minus_sin(p):
    p = np.asarray(p, dtype=float)
    p2 = p * p
    series = p * p2 / 6.0 * (1 - p2 / 20.0 * (1 - p2 / 42.0 * (1 - p2 / 72.0)))
    return np.where(np.abs(p) < 0.1, series, p - np.sin(p))


def _height_ratio(phi):
    """``(phi - sin phi) / (8 sin^2(phi/2))``, the ratio z / rho^2 reached with angle phi."""
    return _phi_minus_sin(phi) / (8.0 * np.sin(0.5 * phi) ** 2)


def geodesic(q0, q1, steps=100, max_iter=200, tol=1e-10):
    """Discretised minimising geodesic from ``q0`` to ``q1``.

    Returns an array of shape ``(steps + 1, 2k + 1)``.  The problem is moved to
    the origin by left translation; unit-speed geodesics there are
    ``w(s) = v (e^{i theta s} - 1) / (i theta)`` in ``w = x + i y`` with
    ``z(s) = (theta s - sin theta s) / (2 theta^2)``, and the angle
    ``phi = theta L`` is found by bisection from the height ratio.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    k = _k_of(q0)
    delta = group_mul(group_inv(q0), q1)
    w1 = delta[:k] + 1j * delta[k:2 * k]
    h = float(delta[2 * k])
    rho = float(np.linalg.norm(w1))
    if rho == 0.0 and h == 0.0:
        raise DomainError("geodesic endpoints coincide")
    s01 = np.linspace(0.0, 1.0, steps + 1)

    if h == 0.0:
        pts = np.concatenate([np.outer(s01, delta[:2 * k]), np.zeros((steps + 1, 1))], axis=1)
        return group_mul(q0, pts)

    if rho == 0.0:
        phi = 2 * math.pi
        L = 2.0 * math.sqrt(math.pi * abs(h))
        v = np.zeros(k, dtype=complex)
        v[0] = 1.0
    else:
        target = abs(h) / rho ** 2
        lo, hi = 0.0, 2 * math.pi
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            if _height_ratio(mid) < target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 4 * np.finfo(float).eps * hi:
                break
        phi = 0.5 * (lo + hi)
        resid = abs(_height_ratio(phi) - target)
        if resid > tol * max(1.0, target) and hi - lo > 8 * np.finfo(float).eps * hi:
            raise NoConvergenceError(f"geodesic angle bisection residual {resid:.3g}")
        L = rho * (0.5 * phi) / math.sin(0.5 * phi)
        v = None
    phi = math.copysign(phi, h)
    theta = phi / L
    if v is None:
        # w1 = v (e^{i phi} - 1) / (i theta)
        v = w1 * (1j * theta) / np.expm1(1j * phi)
    s = s01 * L
    w = np.outer(s * (np.expm1(1j * theta * s) / np.where(s == 0, 1.0, 1j * theta * s)), v)
    w[0] = 0.0
    z = _phi_minus_sin(theta * s) / (2 * theta ** 2)
    pts = np.concatenate([w.real, w.imag, z[:, None]], axis=1)
    return group_mul(q0, pts)


def curve_length(path):
    """Sub-Riemannian length of a discretised horizontal curve (sum of horizontal chord lengths)."""
    path = np.asarray(path, dtype=float)
    k = _k_of(path)
    return float(np.sum(np.linalg.norm(np.diff(path[:, :2 * k], axis=0), axis=1)))
