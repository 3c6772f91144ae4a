import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from regfrac import ShapeError, assemble, build_mesh, Interval, full_oracle
from regfrac.operator import full_of_bump_power, regional_bruteforce


def test_regional_annihilates_constants(reg128):
    r = reg128.apply(np.full(reg128.mesh.M, 3.0), 3.0)
    assert np.max(np.abs(r)) <= 1e-8 * reg128.max_row_abs_sum()


def test_m_matrix_sign_structure(reg128, full128):
    for op in (reg128, full128):
        assert op.offdiag_max() <= 0.0
        assert op.coupling.max() <= 0.0
        assert np.all(np.diag(op.A) > 0)
    # regional rows sum to zero, full rows are strictly diagonally dominant
    assert np.allclose(reg128.row_sum, 0.0, atol=1e-8 * reg128.max_row_abs_sum())
    assert np.all(full128.row_sum > 0)


def test_full_is_regional_plus_phi(reg128, full128, rng):
    u = rng.normal(size=reg128.mesh.M)
    d = full128.apply(u, 0.0) - reg128.apply(u, 0.0)
    assert np.allclose(d, full128.phi * u, rtol=1e-9, atol=1e-9 * np.abs(full128.phi).max())


@given(arrays(np.float64, 128, elements=st.floats(-10, 10)),
       arrays(np.float64, 128, elements=st.floats(-10, 10)),
       st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_apply_is_linear(reg128, u, v, a, t):
    lhs = reg128.apply(a * u + v, a * t + 1.0)
    rhs = a * reg128.apply(u, t) + reg128.apply(v, 1.0)
    assert np.allclose(lhs, rhs, atol=1e-8 * reg128.max_row_abs_sum() * (1 + np.abs(u).max() + np.abs(v).max()))


def test_difference_form_matches_direct(full128, rng):
    u = 50.0 + rng.normal(size=full128.mesh.M)
    assert np.allclose(full128.apply_differences(u, 50.0), full128.apply(u, 50.0),
                       rtol=1e-7, atol=1e-7 * full128.max_row_abs_sum())


def test_trace_shape_is_checked(reg128):
    with pytest.raises(ShapeError):
        reg128.apply(np.zeros(reg128.mesh.M), np.zeros(3))


def test_bump_power_constant_matches_oracle():
    alpha = 0.75

    def bump(x):
        return (1 - x * x) ** mp.mpf(alpha) if abs(x) < 1 else mp.mpf(0)

    ref = full_oracle(bump, alpha, 0.3)
    assert math.isclose(full_of_bump_power(alpha), ref, rel_tol=1e-8)
    assert math.isclose(full_of_bump_power(alpha), 4.442882938158364, rel_tol=1e-12)


def test_full_apply_of_bump_is_constant():
    mesh = build_mesh(Interval(), 256, 3.0)
    op = assemble(mesh, 0.6, "full")
    u = np.maximum(1 - mesh.nodes ** 2, 0) ** 0.6
    v = op.apply(u, 0.0)[mesh.rho >= 0.1]
    assert np.max(np.abs(v / full_of_bump_power(0.6) - 1)) < 5e-3


def test_regional_smooth_bump_against_bruteforce(reg128):
    def smooth(x):
        y = np.asarray(x, dtype=float) / 0.5
        out = np.zeros_like(y)
        m = np.abs(y) < 1
        out[m] = np.exp(-1.0 / (1 - y[m] ** 2))
        return out

    mesh = reg128.mesh
    v = reg128.apply(smooth(mesh.nodes), 0.0)
    j = mesh.center_index()
    ref = regional_bruteforce(smooth, 0.75, float(mesh.nodes[j]))
    assert abs(v[j] - ref) / abs(ref) < 2e-3
