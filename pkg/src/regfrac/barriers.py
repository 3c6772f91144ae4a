"""Boundary barriers V_tau and integrability classifiers for the nonlinearity.

V_tau equals rho**tau in the layer {rho < t0} and continues inside as a cubic
in rho that matches rho**tau to second order at t0 and is flat at the deepest
point of the domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import ConfigurationError, DomainError
from .geometry import GradedMesh, build_mesh
from .operator import OperatorMatrix, assemble

__all__ = [
    "Barrier",
    "build_barrier",
    "boundary_trace",
    "BarrierBoundReport",
    "certify_barrier_bound",
    "SuperSolutionVerdict",
    "certify_super_solution",
    "KOReport",
    "ko_classify",
    "KO_CUTOFFS",
]

KO_CUTOFFS = (1e3, 1e6, 1e9)
KO_GROWTH = 1.5


@dataclass(frozen=True, eq=False)
class Barrier:
    mesh: GradedMesh
    tau: float
    t0: float
    coeffs: tuple
    values: np.ndarray = field(repr=False)

    @property
    def depth(self) -> float:
        return self.mesh.domain.inradius

    def evaluate(self, rho) -> np.ndarray:
        """V as a function of the boundary distance."""
        rho = np.asarray(rho, dtype=float)
        a, b, c, d = self.coeffs
        s = rho - self.t0
        with np.errstate(divide="ignore"):
            inner = a + s * (b + s * (c + s * d))
            return np.where(rho < self.t0, rho ** self.tau, inner)

    def layer_mask(self) -> np.ndarray:
        return self.mesh.rho < self.t0

    def to_dict(self):
        return {"tau": self.tau, "t0": self.t0, "blend": list(self.coeffs)}


def build_barrier(mesh: GradedMesh, tau: float, t0: Optional[float] = None) -> Barrier:
    """Nodal values of V_tau on ``mesh``; t0 defaults to a quarter of the inradius."""
    tau = float(tau)
    if not (-1.0 < tau < 0.0):
        raise DomainError(f"barrier exponent must lie in (-1, 0), got {tau}")
    depth = mesh.domain.inradius
    if t0 is None:
        t0 = depth / 4
    t0 = float(t0)
    if not (0.0 < t0 < mesh.domain.diameter / 4):
        raise ConfigurationError(f"layer width must lie in (0, diameter/4), got {t0}")
    L = depth - t0
    a = t0 ** tau
    b = tau * t0 ** (tau - 1)
    c = 0.5 * tau * (tau - 1) * t0 ** (tau - 2)
    d = -(b + 2 * c * L) / (3 * L * L)
    coeffs = (a, b, c, d)
    s = np.linspace(0.0, L, 2001)
    blend = a + s * (b + s * (c + s * d))
    if blend.min() <= 0:
        raise DomainError(f"cubic interior extension is not positive for tau={tau}, t0={t0}")
    bar = Barrier(mesh, tau, t0, coeffs, np.empty(0))
    vals = bar.evaluate(mesh.rho)
    vals.setflags(write=False)
    return Barrier(mesh, tau, t0, coeffs, vals)


def boundary_trace(barrier: Barrier) -> np.ndarray:
    """Dirichlet values standing in for the infinite boundary value of V.

    On the boundary cell [0, h] the linear interpolant between the trace T and
    V(h) = h**tau has the same integral as rho**tau when T = h**tau (1-tau)/(1+tau).
    """
    mesh = barrier.mesh
    tau = barrier.tau
    h = np.array([mesh.rho[0], mesh.rho[-1]]) if mesh.domain.kind == "interval" else np.array([mesh.rho[-1]])
    return h ** tau * (1 - tau) / (1 + tau)


# ----------------------------------------------------------------------------
# Barrier bound |(-Delta)_Omega V| <= c rho^{tau - 2 alpha}


@dataclass(eq=False)
class BarrierBoundReport:
    alpha: float
    tau: float
    M: int
    sup_m: float
    argsup_rho: float
    sup_m_refined: Optional[float]
    variation: Optional[float]
    finite: bool
    identity_residual: float
    triangle_ok: bool
    profile: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)

    def to_dict(self):
        return {
            "alpha": self.alpha, "tau": self.tau, "M": self.M, "sup_m": self.sup_m,
            "argsup_rho": self.argsup_rho, "sup_m_refined": self.sup_m_refined,
            "variation": self.variation, "finite": self.finite,
            "identity_residual": self.identity_residual, "triangle_ok": self.triangle_ok,
        }


def _bound_profile(op: OperatorMatrix, barrier: Barrier):
    image = op.apply(barrier.values, boundary_trace(barrier))
    rho = op.mesh.rho
    return image, np.abs(image) * rho ** (2 * op.alpha - barrier.tau)


def certify_barrier_bound(op: OperatorMatrix, barrier: Barrier, refine: bool = True) -> BarrierBoundReport:
    """Profile m = |A V| rho^{2 alpha - tau} and its sup, optionally on the mesh with 2M nodes too.

    Also checks the identity full = regional + phi V on the same mesh, using an
    independently assembled full-kind matrix.
    """
    if op.kind != "regional":
        raise ConfigurationError("barrier bound is stated for the regional operator")
    if barrier.mesh is not op.mesh:
        raise ConfigurationError("barrier and operator must share the mesh")
    image, m = _bound_profile(op, barrier)
    finite = bool(np.all(np.isfinite(m)))
    k = int(np.argmax(m))
    full = assemble(op.mesh, op.alpha, "full")
    full_image = full.apply(barrier.values, boundary_trace(barrier))
    expect = image + op.phi * barrier.values
    ident = float(np.max(np.abs(full_image - expect)) / np.max(np.abs(full_image)))
    triangle = bool(np.all(np.abs(full_image) <= np.abs(image) + op.phi * barrier.values
                           + 1e-8 * np.abs(full_image).max()))
    sup_r = var = None
    if refine:
        mesh2 = build_mesh(op.mesh.domain, 2 * op.mesh.M, op.mesh.gamma)
        op2 = assemble(mesh2, op.alpha, "regional")
        bar2 = build_barrier(mesh2, barrier.tau, barrier.t0)
        _, m2 = _bound_profile(op2, bar2)
        sup_r = float(m2.max())
        var = abs(sup_r - float(m.max())) / float(m.max())
    return BarrierBoundReport(op.alpha, barrier.tau, op.mesh.M, float(m.max()), float(op.mesh.rho[k]),
                              sup_r, var, finite, ident, triangle, m, op.mesh.rho.copy())


# ----------------------------------------------------------------------------
# super-solution certificate


@dataclass(eq=False)
class SuperSolutionVerdict:
    verdict: bool
    lam: Optional[float]
    trace: float
    tried: list
    min_margin: float
    doubled_ok: Optional[bool]
    worst_rho: float

    def to_dict(self):
        return {"verdict": self.verdict, "lambda": self.lam, "trace": self.trace,
                "tried": list(self.tried), "min_margin": self.min_margin,
                "doubled_ok": self.doubled_ok, "worst_rho": self.worst_rho}


def _super_margin(op, barrier, f, lam, trace):
    V = lam * barrier.values
    res = op.apply_differences(V, trace) + f(V)
    return res / np.maximum(1.0, np.abs(op.A.diagonal()) * V)


def certify_super_solution(op: OperatorMatrix, barrier: Barrier, f, lam: Optional[float] = None,
                           trace: float = 2.0 ** 14, lam_cap: float = 2.0 ** 10) -> SuperSolutionVerdict:
    """Check A(lam V) + C trace + f(lam V) >= 0 at every node.

    With ``lam`` given only that value is tested; otherwise lam = 1, 2, 4, ...
    up to ``lam_cap`` and the smallest certifying value is returned.  A
    certificate with trace n implies u_n <= lam V by discrete comparison.
    Residuals are compared after scaling by diag(A) * lam V so that rounding
    in the stiff boundary rows is not mistaken for a sign.
    """
    lams = [float(lam)] if lam is not None else [2.0 ** k for k in range(int(math.log2(lam_cap)) + 1)]
    tried = []
    worst = math.inf
    worst_rho = float("nan")
    for L in lams:
        margin = _super_margin(op, barrier, f, L, trace)
        tried.append(L)
        k = int(np.argmin(margin))
        if margin[k] >= -1e-12:
            doubled = bool(np.all(_super_margin(op, barrier, f, 2 * L, trace) >= -1e-12))
            return SuperSolutionVerdict(True, L, float(trace), tried, float(margin[k]), doubled,
                                        float(op.mesh.rho[k]))
        if margin[k] < worst or L == lams[-1]:
            worst, worst_rho = float(margin[k]), float(op.mesh.rho[k])
    return SuperSolutionVerdict(False, None, float(trace), tried, worst, None, worst_rho)


# ----------------------------------------------------------------------------
# integrability classifiers


@dataclass
class KOReport:
    ko_verdict: str
    tail_verdict: str
    ko_threshold: float
    tail_threshold: float
    ko_tails: list
    tail_tails: list
    ko_analytic: Optional[str]
    tail_analytic: Optional[str]

    @property
    def agrees(self) -> Optional[bool]:
        if self.ko_analytic is None:
            return None
        return self.ko_verdict == self.ko_analytic and self.tail_verdict == self.tail_analytic

    def to_dict(self):
        return {
            "ko_verdict": self.ko_verdict, "tail_verdict": self.tail_verdict,
            "ko_threshold": self.ko_threshold, "tail_threshold": self.tail_threshold,
            "ko_tails": list(self.ko_tails), "tail_tails": list(self.tail_tails),
            "ko_analytic": self.ko_analytic, "tail_analytic": self.tail_analytic,
            "agrees": self.agrees,
        }


def _log_integral(g, lo, hi):
    """int_lo^hi g(s) ds with s = e^t."""
    val, _ = integrate.quad(lambda t: g(math.exp(t)) * math.exp(t), math.log(lo), math.log(hi),
                            limit=200, epsabs=0.0, epsrel=1e-10)
    return val


def _classify(g, cutoffs):
    """Tails over [1, S1], [S1, S2], [S2, S3]; convergent iff they shrink by at least KO_GROWTH."""
    edges = (1.0,) + tuple(cutoffs)
    tails = [_log_integral(g, edges[i], edges[i + 1]) for i in range(1, len(edges) - 1)]
    ratios = [tails[i + 1] / tails[i] for i in range(len(tails) - 1)]
    verdict = "converges" if all(r <= 1.0 / KO_GROWTH for r in ratios) else "diverges"
    return verdict, tails


def ko_classify(f, alpha, cutoffs=KO_CUTOFFS) -> KOReport:
    """Numeric verdicts for int^inf ds / sqrt(F(s)), F = int_0^s f, and int^inf f(s) s^{-1-(1+a)/(1-a)} ds."""
    alpha = float(alpha)
    if not (0 < alpha < 1):
        raise DomainError(f"fractional order must lie in (0, 1), got {alpha}")
    f.check(0.0, 10.0)
    s = np.logspace(0, math.log10(cutoffs[-1]), 1000)
    v = f(s)
    if np.any(np.diff(v) < 0) or float(f(np.array(0.0))) < 0:
        raise ConfigurationError("classifiers need a nondecreasing f with f(0) >= 0")
    tail_exp = (1 + alpha) / (1 - alpha)

    if f.family == "power":
        c, p = f.c, f.p

        def F(x):
            return c * x ** (p + 1) / (p + 1)
    else:
        def F(x):
            return integrate.quad(lambda y: float(f(np.array(y))), 0.0, x, limit=200)[0]

    def ko_integrand(x):
        Fx = F(x)
        return math.inf if Fx <= 0 else 1.0 / math.sqrt(Fx)

    def tail_integrand(x):
        return float(f(np.array(x))) * x ** (-1 - tail_exp)

    ko_v, ko_t = _classify(ko_integrand, cutoffs)
    tail_v, tail_t = _classify(tail_integrand, cutoffs)
    ko_a = tail_a = None
    if f.family == "power":
        ko_a = "converges" if f.p > 1 else "diverges"
        tail_a = "converges" if f.p < tail_exp else "diverges"
    return KOReport(ko_v, tail_v, 1.0, tail_exp, ko_t, tail_t, ko_a, tail_a)
