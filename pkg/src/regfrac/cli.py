"""Command-line front end: one subcommand per library operation, driven by scenario files.

    regfrac blowup --config scenarios/blowup_regional.toml --out out/blowup

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical
nonconvergence, 4 invariant breach.  Failed checks do not change the exit
code; they are recorded with pass = false in the report.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (default_window, fit_power_law, fit_rate, green_bound_check,
                       nonexistence_diagnostics, sandwich_verdict)
from .barriers import build_barrier, certify_barrier_bound, certify_super_solution, ko_classify
from .config import TASKS, ScenarioConfig, load_config
from .errors import ConfigurationError, RegfracError
from .geometry import build_mesh, phi_nodes
from .operator import (assemble, full_of_bump_power, full_oracle, regional_bruteforce)
from .solver import (SourceField, blowup_limit, green_matrix, minimality_check,
                     solve_linear_dirichlet, solve_semilinear)

__all__ = ["Report", "run_scenario", "emit_tables", "main", "scheme_version"]

log = logging.getLogger("regfrac")


def scheme_version() -> str:
    """Package version plus a short hash of the discretisation and solver sources."""
    h = hashlib.sha256()
    here = Path(__file__).parent
    for name in ("geometry.py", "operator.py", "solver.py"):
        h.update((here / name).read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


@dataclass
class Report:
    scenario: dict
    results: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    timing_ms: float = 0.0
    version: str = ""
    profiles: list = field(default_factory=list, repr=False)
    fits: list = field(default_factory=list, repr=False)

    def check(self, name, value, tolerance, passed, **meta):
        entry = {"name": name, "value": _plain(value), "tolerance": _plain(tolerance),
                 "pass": bool(passed)}
        entry.update({k: _plain(v) for k, v in meta.items()})
        self.checks.append(entry)
        return passed

    def result(self, name, **values):
        entry = {"name": name}
        entry.update({k: _plain(v) for k, v in values.items()})
        self.results.append(entry)

    def add_fit(self, name, fit, **meta):
        self.fits.append((name, fit))
        self.result(name, **fit.to_dict(), **meta)

    def add_profile(self, label, mesh, values, column="u_n"):
        self.profiles.append((label, column, np.asarray(mesh.nodes), np.asarray(mesh.rho),
                              np.asarray(values, dtype=float)))

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def to_dict(self):
        return {"scenario": self.scenario, "results": self.results, "checks": self.checks,
                "timing_ms": self.timing_ms, "version": self.version}


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


# ----------------------------------------------------------------------------
# tasks


def _mesh(cfg):
    return build_mesh(cfg.domain.build(), cfg.mesh.M, cfg.mesh.gamma)


def _task_assemble_check(cfg, rep):
    mesh = _mesh(cfg)
    a = cfg.alpha
    reg = assemble(mesh, a, "regional")
    full = assemble(mesh, a, "full")
    res = np.max(np.abs(reg.apply(np.ones(mesh.M), 1.0)))
    rep.check("constant_annihilation", res / reg.max_row_abs_sum(), 1e-8,
              res <= 1e-8 * reg.max_row_abs_sum())
    scale = np.max(np.abs(reg.A))
    rep.check("offdiag_sign", reg.offdiag_max() / scale, 1e-12, reg.offdiag_max() <= 1e-12 * scale)
    rep.check("coupling_sign", float(reg.coupling.max()), 0.0, reg.coupling.max() <= 0.0)
    rs = full.apply(np.ones(mesh.M), 1.0)
    err = np.max(np.abs(rs - full.phi) / full.phi)
    rep.check("full_row_sum_equals_phi", err, 1e-8, err <= 1e-8)
    dom = mesh.domain
    if dom.kind == "interval":
        c, L = dom.center, dom.inradius
        u = np.maximum(1 - ((mesh.nodes - c) / L) ** 2, 0.0) ** a
    else:
        u = np.maximum(1 - (mesh.nodes / dom.radius) ** 2, 0.0) ** a
    diff = full.apply(u, 0.0) - reg.apply(u, 0.0)
    err = np.max(np.abs(diff - full.phi * u) / np.maximum(np.abs(full.phi * u), 1e-300))
    rep.check("full_minus_regional_equals_phi_u", err, 1e-8, err <= 1e-8)
    image = full.apply(u, 0.0)
    rep.add_profile("bump_image", mesh, image, column="full_image")
    if dom.kind != "interval":
        rep.result("oracle", note="oracle comparisons are implemented for intervals only")
        return
    exact = full_of_bump_power(a) * L ** (-2 * a)
    sel = mesh.rho >= 0.1 * L
    vals = image[sel]
    spread = (vals.max() - vals.min()) / abs(vals.mean())
    rep.check("bump_image_spread", spread, 5e-3, spread <= 5e-3, window=[0.1 * L, L])

    def bump(x):
        import mpmath as mp
        y = (x - c) / L
        return (1 - y * y) ** mp.mpf(a) if abs(y) < 1 else mp.mpf(0)

    probes = [c + L * p for p in cfg.analysis.probes]
    errs = []
    for p in probes:
        j = int(np.argmin(np.abs(mesh.nodes - p)))
        if mesh.rho[j] < 0.1 * L:
            continue
        ref = full_oracle(bump, a, float(mesh.nodes[j]), support=(dom.a, dom.b))
        errs.append(abs(image[j] - ref) / abs(ref))
        rep.result("oracle_probe", x=mesh.nodes[j], computed=image[j], oracle=ref, closed_form=exact)
    if errs:
        rep.check("bump_oracle_rel_error", max(errs), 5e-3, max(errs) <= 5e-3, window=[0.1 * L, L])

    def smooth(x):
        y = np.asarray((np.asarray(x, dtype=float) - c) / (0.5 * L), dtype=float)
        out = np.zeros_like(y)
        m = np.abs(y) < 1
        out[m] = np.exp(-1.0 / (1 - y[m] ** 2))
        return out

    errs = []
    for p in (0.0, 0.3, -0.7):
        j = int(np.argmin(np.abs(mesh.nodes - (c + L * p))))
        ref = regional_bruteforce(smooth, a, float(mesh.nodes[j]), dom.a, dom.b)
        val = reg.apply(smooth(mesh.nodes), 0.0)[j]
        errs.append(abs(val - ref) / abs(ref))
    rep.check("smooth_bump_bruteforce_rel_error", max(errs), 1e-3, max(errs) <= 1e-3)


def _task_phi(cfg, rep):
    mesh = _mesh(cfg)
    a = cfg.alpha
    ph = phi_nodes(mesh, a)
    rep.add_profile("phi", mesh, ph, column="phi")
    win = cfg.analysis.window or (1e-3 * mesh.domain.inradius, 1e-1 * mesh.domain.inradius)
    fit = fit_power_law(mesh.rho, ph, win)
    rep.add_fit("phi_slope", fit)
    rep.check("phi_exponent", fit.beta, 0.05, abs(fit.beta + 2 * a) <= 0.05,
              expected=-2 * a, window=list(win))
    sel = mesh.rho >= 1e-4
    prod = ph[sel] * mesh.rho[sel] ** (2 * a)
    c = max(prod.max(), 1.0 / prod.min())
    rep.result("phi_two_sided_constant", c=c, lo=prod.min(), hi=prod.max(),
               window=[1e-4, mesh.domain.diameter / 2])
    rep.check("phi_positive", float(ph.min()), 0.0, ph.min() > 0)


def _decay_exponent(rep, sol, n, alpha, cfg, name):
    vals = n - sol.values
    fit = fit_rate(sol, cfg.analysis.window, values=vals)
    rep.add_fit(name, fit, n=n)
    rep.check(name, fit.beta, 0.1, abs(fit.beta - (2 * alpha - 1)) <= 0.1, expected=2 * alpha - 1,
              window=list(fit.window))


def _task_solve(cfg, rep):
    mesh = _mesh(cfg)
    op = assemble(mesh, cfg.alpha, cfg.kind)
    f = cfg.nonlinearity.build()
    prev = None
    for n in cfg.source.trace_levels():
        src = cfg.source.build(trace=n)
        sol = solve_semilinear(op, f, src, cfg.solver)
        label = "xi" if n is None else _level_label(n)
        rep.add_profile(label, mesh, sol.values)
        rep.result("level", n=n, iterations=sol.iterations, residual=sol.residual,
                   equation_residual=sol.equation_residual, center=sol.center_value(),
                   policy=sol.policy, monotone=sol.monotone)
        rep.check(f"iteration_monotone[{label}]", sol.monotone, 1e-10, sol.monotone)
        if prev is not None and n is not None:
            drop = float(np.max(prev.values - sol.values))
            rep.check(f"monotone_in_n[{_level_label(prev.trace)}->{label}]", drop, 1e-10, drop <= 1e-10)
        if n is not None and f.family == "zero" and cfg.source.g == 0.0 and cfg.kind == "regional":
            err = float(np.max(np.abs(sol.values - n)))
            rep.check(f"constant_solution[{label}]", err, 1e-9, err <= 1e-9)
        if (n is not None and n > 0 and f.family == "power" and cfg.source.g == 0.0
                and cfg.kind == "regional" and cfg.alpha > 0.5):
            _decay_exponent(rep, sol, n, cfg.alpha, cfg, f"decay_exponent[{label}]")
            gap = (n - sol.values) / ((f(np.array(n)) + 0.0) * mesh.rho ** (2 * cfg.alpha - 1))
            rep.result("sandwich_constant", n=n, fitted_c=float(gap.max()),
                       upper_violation=float(np.max(sol.values - n)))
            rep.check(f"upper_sandwich[{label}]", float(np.max(sol.values - n)), 1e-10,
                      np.max(sol.values - n) <= 1e-10)
        prev = sol


def _level_label(n) -> str:
    n = float(n)
    return f"n{int(n)}" if n == int(n) else "n" + format(n, "g").replace(".", "p")


def _run_limit(cfg, rep, op, f):
    u, lim = blowup_limit(op, f, cfg.solver, stop_on_convergence=True)
    for s in lim.fields:
        rep.add_profile(_level_label(s.trace), op.mesh, s.values)
    for k, s in enumerate(lim.fields):
        rep.result("level", n=s.trace, iterations=s.iterations, residual=s.residual,
                   equation_residual=s.equation_residual, center=lim.center[k],
                   interior_change=lim.interior_change[k - 1] if k else None)
    rep.result("limit", **lim.to_dict())
    win = [cfg.solver.interior_window * op.mesh.domain.inradius, op.mesh.domain.inradius]
    last = lim.interior_change[-1] if lim.interior_change else float("inf")
    return u, lim, win, last


def _task_blowup(cfg, rep, extra_fits=False):
    mesh = _mesh(cfg)
    op = assemble(mesh, cfg.alpha, cfg.kind)
    f = cfg.nonlinearity.build()
    u, lim, win, last = _run_limit(cfg, rep, op, f)
    if lim.nonexistence:
        rep.check("nonexistence_signal", True, cfg.solver.divergence_levels, True,
                  note="center increments have not decayed over the final levels")
        inc = bool(np.all(np.diff(lim.center) > 0))
        rep.check("center_strictly_increasing", inc, 0.0, inc)
        lo_n, hi_n = cfg.analysis.ratio_levels
        if lo_n in lim.levels and hi_n in lim.levels:
            r = lim.center[lim.levels.index(hi_n)] / lim.center[lim.levels.index(lo_n)]
            rep.check("divergence_ratio", r, cfg.analysis.divergence_ratio,
                      r >= cfg.analysis.divergence_ratio, levels=[lo_n, hi_n])
        if f.family == "power" and (f.q if f.q is not None else f.p) > 1:
            nd = nonexistence_diagnostics(lim.fields, f, cfg.alpha)
            rep.result("nonexistence_diagnostics", **nd.to_dict())
            if nd.exponent is not None:
                rep.check("layer_exponent", nd.exponent, 0.15,
                          abs(nd.exponent - nd.predicted_exponent) <= 0.15,
                          expected=nd.predicted_exponent)
            ok = all(v for v in nd.layer_bound_ok if v is not None)
            rep.check("layer_lower_bound", ok, 0.0, ok)
        return
    rep.check("limit_converged", last, cfg.solver.tol_limit, lim.converged, window=win)
    if len(lim.center) >= 2:
        ratio = lim.center[-1] / lim.center[-2]
        rep.check("top_two_center_ratio", ratio, 1.05, ratio <= 1.05)
    if f.family == "power" and f.p > 1:
        sv = sandwich_verdict(u, f, cfg.kind, cfg.alpha, cfg.analysis.inflation, cfg.analysis.window)
        rep.fits.append(("blowup_rate", sv.fitted))
        rep.result("sandwich", **sv.to_dict())
        rep.check("sandwich", sv.exponent, sv.inflation, sv.passed,
                  interval=[sv.predicted_lower, sv.predicted_upper], window=list(sv.fitted.window))
        if extra_fits:
            lo, hi = sv.fitted.window
            half = fit_rate(u, (lo, hi / 2))
            rep.add_fit("blowup_rate_half_window", half)
            d = abs(half.beta - sv.fitted.beta)
            rep.check("window_sensitivity", d, 0.05, d <= 0.05, window=[lo, hi / 2])


def _task_rates(cfg, rep):
    _task_blowup(cfg, rep, extra_fits=True)


def _task_ko(cfg, rep):
    f = cfg.nonlinearity.build()
    ko = ko_classify(f, cfg.alpha)
    rep.result("ko", **ko.to_dict())
    rep.check("ko_matches_analytic", ko.ko_verdict, ko.ko_analytic, ko.ko_verdict == ko.ko_analytic)
    rep.check("tail_matches_analytic", ko.tail_verdict, ko.tail_analytic,
              ko.tail_verdict == ko.tail_analytic)


def _task_green(cfg, rep):
    mesh = _mesh(cfg)
    op = assemble(mesh, cfg.alpha, "regional")
    G = green_matrix(op)
    ident = float(np.max(np.abs(op.A @ G.G - np.eye(mesh.M))))
    rep.check("inverse", ident, 1e-8, ident <= 1e-8)
    rep.check("entrywise_nonnegative", G.min_ratio, -1e-10, G.min_ratio >= -1e-10)
    rep.check("symmetry_defect", G.symmetry_defect, 1e-2, G.symmetry_defect <= 1e-2,
              matrix_defect=G.matrix_defect)
    rb = green_bound_check(G, mesh, cfg.alpha, refine=cfg.analysis.refine)
    rep.result("green_bound", **rb.to_dict())
    rep.check("bound_ratio_finite", rb.R, 0.0, rb.finite)
    if rb.change is not None:
        rep.check("bound_ratio_stable", rb.change, 0.25, rb.change < 0.25, M=[mesh.M, 2 * mesh.M])
        rep.result("bound_ratio_separated_change", change=rb.change_separated,
                   note="pairs with |x-y| >= max(rho)/2")
    rep.check("density_decays_toward_boundary", rb.boundary_decay, 0.0, rb.boundary_decay)


def _task_barrier(cfg, rep):
    mesh = _mesh(cfg)
    op = assemble(mesh, cfg.alpha, "regional")
    tau = cfg.barrier_tau()
    V = build_barrier(mesh, tau, cfg.analysis.t0)
    bb = certify_barrier_bound(op, V, refine=cfg.analysis.refine)
    rep.result("barrier_bound", **bb.to_dict())
    rep.add_profile("barrier_profile", mesh, bb.profile, column="m")
    rep.check("bound_profile_finite", bb.finite, 0.0, bb.finite)
    rep.check("full_identity", bb.identity_residual, 1e-8, bb.identity_residual <= 1e-8)
    if bb.variation is not None:
        rep.check("bound_profile_stable", bb.variation, 0.2, bb.variation < 0.2, M=[mesh.M, 2 * mesh.M])
    f = cfg.nonlinearity.build()
    trace = cfg.analysis.certificate_trace or cfg.solver.n_cap
    sv = certify_super_solution(op, V, f, trace=trace, lam_cap=cfg.analysis.lam_cap)
    rep.result("super_solution", **sv.to_dict())
    rep.check("super_solution_certificate", sv.lam, cfg.analysis.lam_cap, sv.verdict)
    if not sv.verdict:
        return
    rep.check("certificate_survives_doubling", sv.doubled_ok, 0.0, bool(sv.doubled_ok))
    solver = replace(cfg.solver, n_cap=trace)
    u, lim = blowup_limit(op, f, solver, stop_on_convergence=False)
    mc = minimality_check(op, f, solver, V.values, sv.lam, u, n_trace=trace)
    rep.result("minimality", **mc.to_dict())
    rep.check("limit_below_barrier", mc.limit_below_barrier, 1e-8, mc.limit_below_barrier <= 1e-8)
    rep.check("limit_below_decreasing", mc.limit_below_decreasing, 1e-8, mc.limit_below_decreasing <= 1e-8)
    mc2 = minimality_check(op, f, solver, V.values, 2 * sv.lam, u, n_trace=trace)
    gap = float(np.max(np.abs(mc2.decreasing.upper - mc.decreasing.upper)))
    rep.check("decreasing_limits_agree", gap, 10 * cfg.solver.tol_limit,
              gap <= 10 * cfg.solver.tol_limit, lambdas=[sv.lam, 2 * sv.lam])


_TASKS = {
    "assemble-check": _task_assemble_check,
    "phi": _task_phi,
    "solve": _task_solve,
    "blowup": _task_blowup,
    "rates": _task_rates,
    "ko": _task_ko,
    "green-check": _task_green,
    "barrier-check": _task_barrier,
}


def run_scenario(cfg: ScenarioConfig, task: Optional[str] = None) -> Report:
    """Validate, then run assemble -> solve/limit -> analyse for ``task`` (default cfg.task)."""
    task = task or cfg.task
    cfg = replace(cfg, task=task).validate()
    rep = Report(scenario=cfg.to_dict(), version=scheme_version())
    t = time.perf_counter()
    try:
        _TASKS[task](cfg, rep)
    except RegfracError as exc:
        exc.args = (f"[{cfg.name}/{task}] {exc.args[0] if exc.args else ''}",) + tuple(exc.args[1:])
        raise
    rep.timing_ms = round(1000 * (time.perf_counter() - t), 3)
    return rep


# ----------------------------------------------------------------------------
# output


def _fmt(v: float) -> str:
    return repr(float(v))


def emit_tables(report: Report, out_dir, csv_out: bool = True, json_out: bool = True) -> list:
    """Write profile_<label>.csv, fits.csv and report.json into ``out_dir``; return the paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    try:
        if csv_out:
            for label, column, x, rho, vals in report.profiles:
                p = out / f"profile_{label}.csv"
                with p.open("w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["x", "rho", column])
                    for row in zip(x, rho, vals):
                        w.writerow([_fmt(v) for v in row])
                written.append(p)
            p = out / "fits.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["name", "beta", "intercept", "r_squared", "rho_lo", "rho_hi", "node_count"])
                for name, fit in report.fits:
                    w.writerow([name, _fmt(fit.beta), _fmt(fit.intercept), _fmt(fit.r_squared),
                                _fmt(fit.window[0]), _fmt(fit.window[1]), fit.node_count])
            written.append(p)
        if json_out:
            p = out / "report.json"
            p.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
            written.append(p)
    except OSError as exc:
        raise ConfigurationError(f"cannot write outputs to {out}: {exc}") from exc
    return written


def validate_report(path) -> ScenarioConfig:
    """Check a JSON report's shape and re-parse its scenario echo through the config validator."""
    data = json.loads(Path(path).read_text())
    missing = {"scenario", "results", "checks", "timing_ms", "version"} - set(data)
    if missing:
        raise ConfigurationError(f"report lacks fields {sorted(missing)}")
    return ScenarioConfig.from_dict(data["scenario"]).validate()


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regfrac", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "assemble-check": "assemble both operator kinds and check row sums, signs and oracles",
        "phi": "exterior mass at the nodes and its boundary exponent",
        "solve": "finite-trace semilinear (or linear) Dirichlet solve",
        "blowup": "blow-up limit along the n schedule with rate or nonexistence verdicts",
        "rates": "blow-up limit plus window-sensitivity of the rate fit",
        "ko": "integrability classifiers for the nonlinearity",
        "green-check": "discrete Green matrix and its bound ratio",
        "barrier-check": "barrier bound, super-solution certificate and minimality",
    }
    for name in TASKS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", type=Path, help="scenario file (.toml or .json)")
        p.add_argument("--out", type=Path, help="output directory (default: the scenario's output.dir)")
        p.add_argument("--seedless", action="store_true",
                       help="accepted for compatibility; runs are always deterministic")
        p.add_argument("--levels", type=int, help="number of n levels in the blow-up schedule")
        p.add_argument("--csv", action=argparse.BooleanOptionalAction, default=None,
                       help="write CSV tables")
        p.add_argument("--json", action=argparse.BooleanOptionalAction, default=None,
                       help="write the JSON report")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ScenarioConfig()
        if args.levels is not None:
            cfg = cfg.with_levels(args.levels)
        rep = run_scenario(cfg, args.command)
        out = args.out if args.out is not None else Path(cfg.output.dir)
        csv_out = cfg.output.csv if args.csv is None else args.csv
        json_out = cfg.output.json if args.json is None else args.json
        emit_tables(rep, out, csv_out, json_out)
    except RegfracError as exc:
        print(f"regfrac: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    failed = [c["name"] for c in rep.checks if not c["pass"]]
    print(f"{cfg.name} [{args.command}]: {len(rep.checks) - len(failed)}/{len(rep.checks)} checks passed"
          + (f"; failed: {', '.join(failed)}" if failed else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
