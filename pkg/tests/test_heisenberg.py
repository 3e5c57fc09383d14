import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srbridge import geometry as geo
from srbridge import heisenberg as heis
from srbridge.errors import DomainError

coord = st.floats(-10, 10, allow_nan=False)


def heis_points(k):
    return st.lists(coord, min_size=2 * k + 1, max_size=2 * k + 1).map(np.array)


def gauss_legendre(a, b, panels, m=8):
    x, w = np.polynomial.legendre.leggauss(m)
    e = np.linspace(a, b, panels + 1)
    h = (e[1:] - e[:-1])[:, None]
    return (h * (x + 1) / 2 + e[:-1, None]).ravel(), (h * w / 2).ravel()


class TestGroup:
    def test_identity(self):
        q = np.array([1.0, -2.0, 0.5])
        np.testing.assert_array_equal(heis.group_mul(np.zeros(3), q), q)
        np.testing.assert_array_equal(heis.group_mul(q, np.zeros(3)), q)

    def test_examples(self):
        np.testing.assert_array_equal(heis.group_mul([1.0, 0, 0], [0, 1.0, 0]), [1, 1, 0.5])
        np.testing.assert_array_equal(heis.group_mul([0, 1.0, 0], [1.0, 0, 0]), [1, 1, -0.5])

    def test_inverse(self):
        np.testing.assert_array_equal(heis.group_inv([1.0, 2.0, 3.0]), [-1, -2, -3])
        np.testing.assert_array_equal(heis.group_inv(np.zeros(3)), 0.0)
        q = np.array([0.3, -1.2, 2.0, 0.7, -0.4])
        np.testing.assert_allclose(heis.group_mul(q, heis.group_inv(q)), 0.0, atol=1e-15)

    def test_axioms_on_random_triples(self):
        rng = np.random.default_rng(0)
        a, b, c = rng.normal(scale=2, size=(3, 1000, 3))
        lhs = heis.group_mul(heis.group_mul(a, b), c)
        rhs = heis.group_mul(a, heis.group_mul(b, c))
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)
        np.testing.assert_array_equal(heis.group_mul(a, heis.group_inv(a)), 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            heis.group_mul(np.zeros(3), np.zeros(5))
        with pytest.raises(DomainError):
            heis.group_mul(np.zeros(4), np.zeros(4))

    @settings(max_examples=100, deadline=None)
    @given(heis_points(2), heis_points(2))
    def test_inverse_of_product(self, a, b):
        np.testing.assert_allclose(heis.group_inv(heis.group_mul(a, b)),
                                   heis.group_mul(heis.group_inv(b), heis.group_inv(a)), atol=1e-10)


class TestFrames:
    def test_examples(self):
        np.testing.assert_array_equal(heis.frames(np.array([0.0, 2.0, 5.0]))[:, 0], [1, 0, -1])
        np.testing.assert_array_equal(heis.frames(np.zeros(3)), [[1, 0], [0, 1], [0, 0]])
        f = heis.frames(np.array([1.0, 0, 0, 3.0, 0]))
        np.testing.assert_array_equal(f[:, 2], [0, 0, 1, 0, 0.5])

    def test_left_invariance(self):
        rng = np.random.default_rng(1)
        phi = lambda q: q[..., 0] ** 2 * q[..., 2] + q[..., 1] * q[..., 2] ** 2 - q[..., 0] * q[..., 1]  # noqa: E731
        h = 1e-5
        for _ in range(20):
            qt, q = rng.normal(size=(2, 3))
            sq, sl = heis.frames(q), heis.frames(heis.group_mul(qt, q))
            for j in range(2):
                lhs = (phi(heis.group_mul(qt, q + h * sq[:, j])) - phi(heis.group_mul(qt, q - h * sq[:, j]))) / (2 * h)
                p = heis.group_mul(qt, q)
                rhs = (phi(p + h * sl[:, j]) - phi(p - h * sl[:, j])) / (2 * h)
                assert abs(lhs - rhs) < 1e-6

    def test_model_bracket_generating(self):
        m = heis.heisenberg_model(2)
        for j in range(2):
            np.testing.assert_allclose(geo.lie_bracket(m, j, 2 + j, np.ones(5)), np.eye(5)[4])
        np.testing.assert_array_equal(geo.lie_bracket(m, 0, 3, np.ones(5)), 0.0)


class TestSurrogates:
    def test_fhat(self):
        assert heis.fhat_squared(np.array([0, 0, -0.5])) == pytest.approx(2 * math.pi)
        assert heis.fhat_squared(np.array([1.0, 0, 0])) == 1.0
        assert heis.fhat_squared(np.array([1.0, 1, 1])) == pytest.approx(2 + 4 * math.pi)
        assert heis.fhat_squared(np.zeros(3)) == 0.0

    def test_score_examples(self):
        np.testing.assert_array_equal(heis.score_hat(np.zeros(3), 0.3), 0.0)
        np.testing.assert_allclose(heis.score_hat(np.array([1.0, 0, 1]), 0.5), [-2, -2 * math.pi])
        np.testing.assert_allclose(heis.score_hat(np.array([0, 1.0, 0]), 1.0), [0, -1])

    def test_score_is_horizontal_gradient_of_fhat(self):
        rng = np.random.default_rng(2)
        h = 1e-6
        for _ in range(30):
            qt, q = rng.normal(size=(2, 3))
            rel = heis.group_mul(heis.group_inv(qt), q)
            if abs(rel[2]) < 1e-2:
                continue
            t = rng.uniform(0.1, 1.0)
            f = lambda p: heis.fhat_squared(heis.group_mul(heis.group_inv(qt), p))  # noqa: E731
            s = heis.frames(q)
            grad = [(f(q + h * s[:, j]) - f(q - h * s[:, j])) / (2 * h) for j in range(2)]
            np.testing.assert_allclose(heis.score_hat(rel, t), -np.array(grad) / (2 * t), atol=1e-5)

    def test_score_nonpositive_time(self):
        with pytest.raises(DomainError):
            heis.score_hat(np.ones(3), 0.0)


class TestStep:
    def test_zero_increment(self):
        q = np.array([0.5, 1.0, -2.0])
        np.testing.assert_array_equal(heis.heis_step(q, np.zeros(2), 0.0), q)

    def test_from_identity(self):
        np.testing.assert_array_equal(heis.heis_step(np.zeros(3), np.array([0.2, -0.3]), 0.7), [0.2, -0.3, 0.7])

    def test_two_steps_compose(self):
        q = np.array([0.1, 0.2, 0.3])
        a, b = (np.array([0.5, -1.0]), 0.2), (np.array([0.3, 0.4]), -0.1)
        two = heis.heis_step(heis.heis_step(q, *a), *b)
        comp = heis.group_mul(q, heis.group_mul(np.r_[a[0], a[1]], np.r_[b[0], b[1]]))
        np.testing.assert_allclose(two, comp, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            heis.heis_step(np.zeros(3), np.zeros(3), 0.0)

    def test_vectorised_path_matches_recursion(self):
        rng = np.random.default_rng(3)
        dW, dA = rng.normal(size=(4, 50, 4)), rng.normal(size=(4, 50))
        x0 = rng.normal(size=5)
        states = heis.heisenberg_path(x0, dW, dA)
        q = np.broadcast_to(x0, (4, 5))
        for i in range(50):
            q = heis.heis_step(q, dW[:, i], dA[:, i])
            np.testing.assert_allclose(states[:, i + 1], q, atol=1e-12)

    def test_area_increment(self):
        L = np.zeros((4, 4))
        L[0, 2], L[1, 3], L[0, 1] = 0.5, -0.25, 9.0
        assert heis.area_increment(L) == 0.25


class TestHeatKernel:
    @pytest.mark.parametrize("t,z", [(0.5, 0.3), (0.1, 0.2), (1.0, 0.0), (0.01, 0.25), (0.05, -0.4)])
    def test_closed_form_on_vertical_axis(self, t, z):
        # For k = 1 and x = y = 0 the integral is elementary: sech^2(pi z / t) / (4 t^2).
        exact = 1.0 / (math.cosh(math.pi * z / t) ** 2 * 4 * t * t)
        np.testing.assert_allclose(heis.heat_kernel(np.array([0, 0, z]), t), exact, rtol=1e-3)

    def test_horizontal_plane_matches_direct_quadrature(self):
        # Independent oracle: real-axis integral with scipy where cancellation is mild.
        from scipy.integrate import quad
        for x, y, z, t in [(0.3, 0.2, 0.1, 0.5), (1.0, -0.5, 0.4, 1.0), (0.2, 0.0, 0.0, 0.3)]:
            r2 = x * x + y * y

            def f(lam):
                u = 2 * lam / math.sinh(2 * lam) if lam else 1.0
                c = lam / math.tanh(2 * lam) if lam else 0.5
                return u * math.cos(4 * lam * z / t) * math.exp(-c * r2 / t)

            val = 2 * quad(f, 0, 60, limit=400)[0] * 4 / (2 * math.pi * t) ** 2
            np.testing.assert_allclose(heis.heat_kernel(np.array([x, y, z]), t), val, rtol=1e-8)

    def test_symmetry_in_z(self):
        q = np.array([0.4, -0.3, 0.6])
        np.testing.assert_allclose(heis.heat_kernel(q, 0.3), heis.heat_kernel(q * [1, 1, -1], 0.3), rtol=1e-12)

    def test_positive_on_grid(self):
        g = np.linspace(-1, 1, 5)
        pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
        for t in (0.1, 0.5, 1.0):
            assert np.all(heis.heat_kernel(pts, t) > 0)

    def test_mass_close_to_one(self):
        # p depends on (x, y) only through r = |(x, y)|; mass beyond r = 6 is below e^-36.
        r, wr = gauss_legendre(0, 6, 6)
        z, wz = gauss_legendre(0, 6, 6)
        R, Z = np.meshgrid(r, z, indexing="ij")
        p = heis.heat_kernel(np.stack([R, 0 * R, Z], -1), 0.5)
        mass = 2 * np.sum(p * (2 * math.pi * r * wr)[:, None] * wz[None, :])
        assert abs(mass - 1) < 1e-3

    def test_k2_normalisation(self):
        # Mass in dimension 5 through the radial reduction: area of S^3 = 2 pi^2.
        r, wr = gauss_legendre(0, 7, 7)
        z, wz = gauss_legendre(0, 7, 7)
        R, Z = np.meshgrid(r, z, indexing="ij")
        q = np.stack([R, 0 * R, 0 * R, 0 * R, Z], -1)
        p = heis.heat_kernel(q, 0.5)
        mass = 2 * np.sum(p * (2 * math.pi ** 2 * r ** 3 * wr)[:, None] * wz[None, :])
        assert abs(mass - 1) < 1e-3

    def test_log_kernel_far_tail(self):
        lp = heis.log_heat_kernel(np.array([0, 0, 0.25]), 0.005)
        exact = -2 * math.log(math.cosh(math.pi * 0.25 / 0.005)) - math.log(4 * 0.005 ** 2)
        assert lp == pytest.approx(exact, rel=1e-4)

    def test_errors(self):
        with pytest.raises(DomainError):
            heis.heat_kernel(np.zeros(3), 0.0)
        with pytest.raises(DomainError):
            heis.heat_kernel(np.zeros(3), 1.0, n_quad=4)


class TestGeodesic:
    def test_horizontal_target_is_straight(self):
        path = heis.geodesic(np.zeros(3), np.array([1.0, 0, 0]), 10)
        np.testing.assert_allclose(path[:, 0], np.linspace(0, 1, 11))
        np.testing.assert_array_equal(path[:, 1:], 0.0)

    def test_vertical_target(self):
        for h in (1.0, -0.3):
            path = heis.geodesic(np.zeros(3), np.array([0, 0, h]), 200)
            np.testing.assert_allclose(path[0], 0.0, atol=1e-15)
            end = heis.group_mul(heis.group_inv(path[-1]), np.array([0, 0, h]))
            assert heis.fhat_squared(end) < 1e-6
            assert heis.curve_length(path) == pytest.approx(2 * math.sqrt(math.pi * abs(h)), rel=1e-4)

    def test_endpoints_and_length_bounds(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            q0, q1 = rng.normal(size=(2, 3))
            path = heis.geodesic(q0, q1, 400)
            np.testing.assert_allclose(path[0], q0, atol=1e-12)
            np.testing.assert_allclose(path[-1], q1, atol=1e-8)
            fh = math.sqrt(heis.fhat_squared(heis.group_mul(heis.group_inv(q0), q1)))
            L = heis.curve_length(path)
            assert fh / (2 * math.sqrt(2)) <= L <= math.sqrt(2) * fh

    def test_path_is_horizontal(self):
        path = heis.geodesic(np.zeros(3), np.array([0.7, -0.2, 0.5]), 2000)
        d = np.diff(path, axis=0)
        mid = 0.5 * (path[1:] + path[:-1])
        vertical = d[:, 2] - 0.5 * (mid[:, 0] * d[:, 1] - mid[:, 1] * d[:, 0])
        assert np.max(np.abs(vertical)) < 1e-9

    def test_shorter_than_competitor(self):
        # The straight line then a vertical loop is longer than the geodesic.
        path = heis.geodesic(np.zeros(3), np.array([1.0, 0, 0.2]), 400)
        assert heis.curve_length(path) < 1 + 2 * math.sqrt(math.pi * 0.2)

    def test_higher_dimension(self):
        q1 = np.array([0.3, 0.1, -0.2, 0.4, 0.6])
        path = heis.geodesic(np.zeros(5), q1, 400)
        np.testing.assert_allclose(path[-1], q1, atol=1e-8)

    def test_coincident_points(self):
        with pytest.raises(DomainError):
            heis.geodesic(np.ones(3), np.ones(3))
