import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regfrac import (ConfigurationError, InvariantBreachError, NonconvergenceError, Nonlinearity,
                     SolverConfig, SourceField, UnsupportedError, assemble, blowup_limit, build_mesh,
                     green_matrix, Interval, solve_linear_dirichlet, solve_semilinear)
from regfrac.solver import _divergence_signal


def test_power_nonlinearity_uses_positive_part():
    f = Nonlinearity.power(2.0, 3.0)
    assert np.allclose(f(np.array([-2.0, 0.0, 2.0])), [0.0, 0.0, 16.0])
    assert f.q == 3.0 and f.convex
    assert f.lipschitz_on(2.0) == pytest.approx(24.0)
    assert Nonlinearity.power(1.0, 0.5).lipschitz_on(1.0) == np.inf


def test_nonlinearity_validation():
    with pytest.raises(ConfigurationError):
        Nonlinearity.power(-1.0, 2.0)
    with pytest.raises(ConfigurationError):
        Nonlinearity.custom(lambda s: -s)


def test_solver_config_validation():
    with pytest.raises(ConfigurationError):
        SolverConfig(b2_policy="magic")
    with pytest.raises(ConfigurationError):
        SolverConfig(n_factor=1.0)
    assert SolverConfig(n0=1, n_factor=2, n_cap=16).schedule() == [1, 2, 4, 8, 16]


@given(n=st.floats(-100, 100))
@settings(max_examples=20, deadline=None)
def test_linear_problem_reproduces_constants(reg128, n):
    sol = solve_linear_dirichlet(reg128, SourceField(0.0, n))
    assert np.allclose(sol.values, n, atol=1e-9 * max(1.0, abs(n)))


def test_linear_problem_with_source_is_positive(reg128):
    sol = solve_linear_dirichlet(reg128, SourceField(1.0, 0.0))
    assert np.all(sol.values > 0)
    assert sol.equation_residual < 1e-10


@pytest.mark.parametrize("n", [1.0, 2.0, 4.0])
def test_policies_agree(reg128, n):
    f = Nonlinearity.power(1.0, 3.0)
    vals = [solve_semilinear(reg128, f, SourceField(0.0, n), SolverConfig(b2_policy=p)).values
            for p in ("paper-exact", "adaptive", "bracket")]
    assert np.max(np.abs(vals[0] - vals[2])) < 1e-6
    assert np.max(np.abs(vals[1] - vals[2])) < 1e-8


def test_bracket_solution_is_ordered_and_accurate(reg128):
    f = Nonlinearity.power(1.0, 4.0)
    sol = solve_semilinear(reg128, f, SourceField(0.0, 16.0))
    assert sol.monotone and sol.policy == "bracket"
    assert np.all(sol.lower <= sol.upper + 1e-12)
    assert sol.equation_residual < 1e-10
    assert np.all(sol.values <= 16.0)


def test_solutions_increase_with_trace(reg128):
    f = Nonlinearity.power(1.0, 3.0)
    u = [solve_semilinear(reg128, f, SourceField(0.0, n)).values for n in (1, 2, 4, 8)]
    for a, b in zip(u, u[1:]):
        assert np.all(b - a >= -1e-10)


def test_paper_exact_stagnation_is_reported(reg128):
    f = Nonlinearity.power(1.0, 8.0)
    with pytest.raises(NonconvergenceError) as exc:
        solve_semilinear(reg128, f, SourceField(0.0, 8.0), SolverConfig(b2_policy="paper-exact", max_iter=50))
    assert exc.value.exit_code == 3


def test_green_matrix_is_positive_inverse(reg128):
    G = green_matrix(reg128)
    assert np.max(np.abs(reg128.A @ G.G - np.eye(reg128.mesh.M))) < 1e-8
    assert G.min_ratio >= -1e-10
    assert G.symmetry_defect < 1e-2


def test_blowup_rejects_unsupported_setups(mesh128, reg128):
    with pytest.raises(ConfigurationError):
        blowup_limit(reg128, Nonlinearity.zero())
    with pytest.raises(ConfigurationError):
        blowup_limit(assemble(mesh128, 0.4), Nonlinearity.power(1.0, 4.0))


def test_blowup_limit_levels_are_monotone(reg128):
    u, rep = blowup_limit(reg128, Nonlinearity.power(1.0, 4.0), SolverConfig(n_cap=256.0))
    assert rep.levels == [2.0 ** k for k in range(9)]
    assert np.all(np.diff(rep.center) > 0)
    assert not rep.nonexistence and not rep.experimental
    assert rep.interior_change[-1] < rep.interior_change[0]


def test_blowup_flags_experimental_exponent(reg128):
    _, rep = blowup_limit(reg128, Nonlinearity.power(1.0, 2.0), SolverConfig(n_cap=4.0))
    assert rep.experimental


def test_divergence_signal_rule():
    n = 2.0 ** np.arange(12)
    assert _divergence_signal(np.log(n), 4)                      # log growth never decays
    assert not _divergence_signal(1 - 1 / n, 4)                   # geometric approach to a limit
    assert not _divergence_signal(np.minimum(n, 100.0), 4)        # saturated sequence
    assert not _divergence_signal(np.log(n[:4]), 4)               # too few levels
