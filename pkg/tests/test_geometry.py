import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regfrac import Ball, DomainError, FractionalOrder, Interval, build_mesh, phi, phi_nodes
from regfrac.errors import ConfigurationError, DivergenceError
from regfrac.geometry import sphere_area


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5, float("nan")])
def test_fractional_order_rejects_out_of_range(alpha):
    with pytest.raises(DomainError):
        FractionalOrder(alpha)


def test_interval_rejects_empty():
    with pytest.raises(DomainError):
        Interval(1.0, 1.0)


def test_interval_distance_and_radius():
    dom = Interval(-1.0, 3.0)
    assert dom.inradius == 2.0 and dom.diameter == 4.0 and dom.center == 1.0
    assert np.allclose(dom.rho(np.array([-0.5, 1.0, 2.5])), [0.5, 2.0, 0.5])


@pytest.mark.parametrize("M,gamma", [(8, 1.0), (64, 2.0), (513, 3.0), (512, 6.0)])
def test_mesh_is_graded_and_symmetric(M, gamma):
    mesh = build_mesh(Interval(-1.0, 1.0), M, gamma)
    x = mesh.nodes
    assert np.all(np.diff(x) > 0) and x[0] > -1 and x[-1] < 1
    assert np.allclose(x, -x[::-1], atol=1e-15)
    assert math.isclose(mesh.h_min, (2.0 / (M + 1)) ** gamma, rel_tol=1e-12)
    # rho is kept exactly; the rounded nodes agree to machine precision in absolute terms
    assert np.allclose(mesh.rho, np.minimum(x + 1, 1 - x), rtol=0, atol=4e-16)


def test_mesh_rejects_bad_sizes():
    with pytest.raises(ConfigurationError):
        build_mesh(Interval(), 4)
    with pytest.raises(ConfigurationError):
        build_mesh(Interval(), 64, 0.5)


def test_ball_mesh_clusters_toward_sphere():
    mesh = build_mesh(Ball(2.0, 3), 32, 3.0)
    assert np.all(np.diff(mesh.nodes) > 0)
    assert np.all(np.diff(mesh.rho) < 0)
    assert mesh.nodes[-1] < 2.0


@given(alpha=st.floats(0.05, 0.95), x=st.floats(-0.99, 0.99))
@settings(max_examples=60, deadline=None)
def test_interval_phi_closed_form_and_symmetry(alpha, x):
    dom = Interval(-1.0, 1.0)
    v = phi(dom, alpha, x)
    expected = ((x + 1) ** (-2 * alpha) + (1 - x) ** (-2 * alpha)) / (2 * alpha)
    assert v > 0
    assert math.isclose(v, expected, rel_tol=1e-12)
    assert math.isclose(v, phi(dom, alpha, -x), rel_tol=1e-12)


def test_phi_infinite_on_boundary():
    with pytest.raises(DivergenceError):
        phi(Interval(), 0.5, 1.0)


@pytest.mark.parametrize("N", [2, 3])
def test_ball_phi_at_center(N):
    # at the center the exterior is {|y| > R}: |S^{N-1}| R^{-2a} / (2a)
    alpha, R = 0.6, 1.5
    v = float(phi(Ball(R, N), alpha, 0.0))
    assert math.isclose(v, sphere_area(N) * R ** (-2 * alpha) / (2 * alpha), rel_tol=1e-8)


def test_ball_phi_off_center_against_polar_quadrature():
    # independent check: integrate |x-y|^{-2-2a} over |y| > 1 in polar coordinates about the origin
    from scipy import integrate
    alpha, r = 0.6, 0.5

    def kern(theta, s):
        return s * (s * s + r * r - 2 * s * r * math.cos(theta)) ** (-1 - alpha)

    ref, _ = integrate.dblquad(kern, 1.0, np.inf, 0.0, 2 * math.pi, epsrel=1e-10)
    assert math.isclose(float(phi(Ball(1.0, 2), alpha, r)), ref, rel_tol=1e-7)


def test_phi_nodes_matches_pointwise(mesh128):
    v = phi_nodes(mesh128, 0.75)
    rho = mesh128.rho
    assert np.allclose(v, (rho ** -1.5 + (2 - rho) ** -1.5) / 1.5, rtol=1e-12)
    mid = rho > 0.1
    assert np.allclose(v[mid], phi(mesh128.domain, 0.75, mesh128.nodes[mid]), rtol=1e-12)
