"""The thirteen acceptance criteria at their stated tolerances, one printed line each."""
import math
from pathlib import Path

import mpmath as mp
import numpy as np
import pytest

from regfrac import (Interval, Nonlinearity, SolverConfig, SourceField, assemble, blowup_limit,
                     build_barrier, build_mesh, certify_barrier_bound, certify_super_solution,
                     fit_power_law, fit_rate, full_oracle, green_bound_check, green_matrix,
                     ko_classify, load_config, phi_nodes, sandwich_verdict, solve_semilinear)
from regfrac.analysis import predicted_interval
from regfrac.cli import emit_tables, run_scenario
from regfrac.config import AnalysisSpec

from conftest import record_acceptance

SCENARIOS = sorted((Path(__file__).parent.parent / "scenarios").glob("*.*"))
S4 = Nonlinearity.power(1.0, 4.0)


@pytest.fixture(scope="module")
def regional_limit():
    op = assemble(build_mesh(Interval(), 512, 3.0), 0.75, "regional")
    return op, blowup_limit(op, S4, SolverConfig(n_cap=2.0 ** 14))


def test_01_constant_annihilation():
    worst = 0.0
    for M in (128, 512):
        op = assemble(build_mesh(Interval(), M, 3.0), 0.75, "regional")
        r = np.max(np.abs(op.apply(np.ones(M), 1.0))) / op.max_row_abs_sum()
        worst = max(worst, r)
    ok = worst <= 1e-8
    record_acceptance(1, "constant annihilation", ok, f"max residual / row sum = {worst:.2e} (<= 1e-8)")
    assert ok


def test_02_operator_oracle():
    alpha = 0.75
    mesh = build_mesh(Interval(), 512, 3.0)
    op = assemble(mesh, alpha, "full")
    u = np.maximum(1 - mesh.nodes ** 2, 0.0) ** alpha
    image = op.apply(u, 0.0)
    sel = np.flatnonzero(mesh.rho >= 0.1)
    spread = (image[sel].max() - image[sel].min()) / abs(image[sel].mean())

    def bump(x):
        return (1 - x * x) ** mp.mpf(alpha) if abs(x) < 1 else mp.mpf(0)

    probes = sel[np.linspace(0, sel.size - 1, 7).astype(int)]
    err = max(abs(image[j] - full_oracle(bump, alpha, float(mesh.nodes[j]))) / abs(image[j]) for j in probes)
    ok = err <= 5e-3 and spread <= 5e-3
    record_acceptance(2, "operator oracle", ok,
                      f"max rel err vs quadrature oracle {err:.2e}, spread {spread:.2e} (both <= 5e-3)")
    assert ok


def test_03_phi_exponent():
    parts, ok = [], True
    for alpha in (0.6, 0.75, 0.9):
        mesh = build_mesh(Interval(), 512, 3.0)
        fit = fit_power_law(mesh.rho, phi_nodes(mesh, alpha), (1e-3, 1e-1))
        ok &= abs(fit.beta + 2 * alpha) <= 0.05
        parts.append(f"a={alpha}: {fit.beta:.4f} vs {-2 * alpha:.2f}")
    record_acceptance(3, "phi exponent", ok, "; ".join(parts) + " (+-0.05)")
    assert ok


def test_04_finite_data_decay():
    op = assemble(build_mesh(Interval(), 512, 3.0), 0.75, "regional")
    sol = solve_semilinear(op, Nonlinearity.power(1.0, 3.0), SourceField(0.0, 8.0))
    fit = fit_rate(sol, values=8.0 - sol.values)
    ok = abs(fit.beta - 0.5) <= 0.1
    record_acceptance(4, "finite-data decay", ok,
                      f"exponent of n - u_n = {fit.beta:.4f} on rho in [{fit.window[0]:.2e}, {fit.window[1]:.2f}]"
                      " (0.5 +- 0.1)")
    assert ok


def test_05_comparison_and_monotonicity():
    op = assemble(build_mesh(Interval(), 512, 3.0), 0.75, "regional")
    f = Nonlinearity.power(1.0, 3.0)
    worst_n, iter_ok = 0.0, True
    prev = None
    for n in (1.0, 2.0, 4.0, 8.0):
        # both policies check every iterate against the previous one and raise on a breach
        sols = [solve_semilinear(op, f, SourceField(0.0, n), SolverConfig(b2_policy=p))
                for p in ("bracket", "adaptive")]
        iter_ok &= all(s.monotone for s in sols)
        if prev is not None:
            worst_n = max(worst_n, float(np.max(prev - sols[0].values)))
        prev = sols[0].values
    ok = worst_n <= 1e-10 and iter_ok
    record_acceptance(5, "comparison / monotonicity", ok,
                      f"max decrease in n = {worst_n:.2e} (<= 1e-10), iterations monotone: {iter_ok}")
    assert ok


def test_06_blowup_sandwich(regional_limit):
    op, (u, lim) = regional_limit
    sv = sandwich_verdict(u, S4, "regional", 0.75)
    lo, hi = predicted_interval(0.75, 4, 4, "regional")
    rate_ok = lo - 0.05 <= abs(sv.fitted.beta) <= hi + 0.05
    change = lim.interior_change[-1]
    ok = rate_ok and lim.converged
    record_acceptance(6, "blow-up sandwich", ok,
                      f"|beta| = {abs(sv.fitted.beta):.4f} in [{lo - 0.05:.3f}, {hi + 0.05:.3f}]: {rate_ok}; "
                      f"interior change at n = {lim.levels[-1]:g} is {change:.2e} (converged needs <= 1e-6): "
                      f"{lim.converged}")
    assert rate_ok, "rate outside the sandwich"
    assert lim.converged, f"limit not declared converged: interior change {change:.3e} > 1e-6"


def test_07_full_operator_rate():
    op = assemble(build_mesh(Interval(), 512, 3.0), 0.75, "full")
    u, lim = blowup_limit(op, S4, SolverConfig(n_cap=2.0 ** 14))
    fit = fit_rate(u)
    ok = abs(abs(fit.beta) - 0.5) <= 0.1 and not lim.nonexistence
    record_acceptance(7, "full-operator rate", ok, f"|beta| = {abs(fit.beta):.4f} (0.5 +- 0.1)")
    assert ok


def test_08_nonexistence(regional_limit):
    op = assemble(build_mesh(Interval(), 512, 3.0), 0.9, "regional")
    _, lim = blowup_limit(op, Nonlinearity.power(1.0, 2.0), SolverConfig(n_cap=2.0 ** 10))
    c = np.array(lim.center)
    increasing = bool(np.all(np.diff(c) > 0))
    thr = AnalysisSpec().divergence_ratio
    ratio = c[lim.levels.index(1024.0)] / c[lim.levels.index(64.0)]
    _, contrast = regional_limit[1]
    top_two = contrast.center[-1] / contrast.center[-2]
    ok = increasing and lim.nonexistence and ratio >= thr and top_two <= 1.05 and not contrast.nonexistence
    record_acceptance(8, "nonexistence", ok,
                      f"center increasing: {increasing}, signal: {lim.nonexistence}, u_1024/u_64 = {ratio:.3f} "
                      f"(>= {thr}); contrast top-two ratio {top_two:.5f} (<= 1.05), "
                      f"contrast signal: {contrast.nonexistence}")
    assert ok


def test_09_barrier_bound():
    parts, ok = [], True
    for alpha, tau in ((0.75, -0.5), (0.9, -0.25)):
        mesh = build_mesh(Interval(), 256, 3.0)
        rep = certify_barrier_bound(assemble(mesh, alpha, "regional"), build_barrier(mesh, tau))
        ok &= rep.finite and rep.variation < 0.2
        parts.append(f"(a, tau) = ({alpha}, {tau}): sup m {rep.sup_m:.4g} -> {rep.sup_m_refined:.4g}, "
                     f"change {100 * rep.variation:.2f}%")
    record_acceptance(9, "barrier bound", ok, "; ".join(parts) + " (< 20%)")
    assert ok


def test_10_super_solution_certificate(regional_limit):
    op, (u, lim) = regional_limit
    V = build_barrier(op.mesh, -0.5)
    cert = certify_super_solution(op, V, S4, trace=lim.levels[-1], lam_cap=2.0 ** 10)
    excess = float(np.max(u.values - cert.lam * V.values)) if cert.verdict else math.inf
    ok = cert.verdict and cert.lam <= 2 ** 10 and excess <= 1e-8
    record_acceptance(10, "super-solution certificate", ok,
                      f"lambda = {cert.lam} (<= 1024), max(u_inf - lambda V) = {excess:.3g} (<= 1e-8)")
    assert ok


def test_11_green_bound():
    parts, ok = [], True
    for alpha in (0.75, 0.9):
        mesh = build_mesh(Interval(), 256, 3.0)
        G = green_matrix(assemble(mesh, alpha, "regional"))
        rep = green_bound_check(G, mesh, alpha, refine=True)
        pos = G.min_ratio >= -1e-10
        ok &= rep.finite and rep.change < 0.25 and pos
        parts.append(f"a={alpha}: R {rep.R:.3f} -> {rep.R_refined:.3f} ({100 * rep.change:.1f}%), "
                     f"separated-pair R {rep.R_separated:.4f} -> {rep.R_separated_refined:.4f} "
                     f"({100 * rep.change_separated:.2f}%), min/max entry {G.min_ratio:.2e}")
    record_acceptance(11, "Green bound", ok, "; ".join(parts) + " (change < 25%)")
    assert ok


def test_12_ko_classifiers():
    wrong = []
    for p in (0.5, 1.0, 2.0, 5.0, 8.0):
        for alpha in (0.6, 0.75, 0.9):
            rep = ko_classify(Nonlinearity.power(1.0, p), alpha)
            if not rep.agrees:
                wrong.append((p, alpha))
    ok = not wrong
    record_acceptance(12, "KO classifiers", ok, f"{15 - len(wrong)}/15 verdict pairs match the analytic thresholds")
    assert ok


def test_13_determinism(tmp_path):
    differing = []
    count = 0
    for path in SCENARIOS:
        cfg = load_config(path)
        runs = [emit_tables(run_scenario(cfg), tmp_path / f"{path.stem}_{k}", json_out=False) for k in (0, 1)]
        for a, b in zip(*runs):
            count += 1
            if a.read_bytes() != b.read_bytes():
                differing.append(a.name)
    ok = not differing and count > 0
    record_acceptance(13, "determinism", ok,
                      f"{count} CSV files from {len(SCENARIOS)} scenarios compared byte-for-byte, "
                      f"{len(differing)} differ")
    assert ok
