"""Boundary-rate fits, sandwich verdicts, the discrete Green bound and the
nonexistence layer diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import FitError, UnsupportedError
from .geometry import GradedMesh, sphere_area

__all__ = [
    "RateFit",
    "fit_power_law",
    "fit_rate",
    "default_window",
    "SandwichVerdict",
    "predicted_interval",
    "sandwich_verdict",
    "GreenBoundReport",
    "green_bound_ratio",
    "green_bound_check",
    "NonexistenceReport",
    "nonexistence_regime",
    "nonexistence_diagnostics",
]

EXCLUDE_NODES = 2


@dataclass(frozen=True)
class RateFit:
    beta: float
    intercept: float
    r_squared: float
    window: tuple
    node_count: int
    residual: float = 0.0

    def to_dict(self):
        return {"beta": self.beta, "intercept": self.intercept, "r_squared": self.r_squared,
                "window": list(self.window), "node_count": self.node_count,
                "residual": self.residual}


def default_window(mesh: GradedMesh) -> tuple:
    """rho in [5 h_min, 0.1 diameter]."""
    return (5.0 * mesh.h_min, 0.1 * mesh.domain.diameter)


def _edge_mask(mesh: GradedMesh, exclude: int) -> np.ndarray:
    """False for the ``exclude`` nodes nearest each boundary point."""
    keep = np.ones(mesh.M, dtype=bool)
    if exclude <= 0:
        return keep
    keep[-exclude:] = False
    if mesh.domain.kind == "interval":
        keep[:exclude] = False
    return keep


def fit_power_law(rho, values, window, mask=None) -> RateFit:
    """Least-squares slope of log(values) against log(rho) over lo <= rho <= hi."""
    rho = np.asarray(rho, dtype=float)
    values = np.asarray(values, dtype=float)
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise FitError(f"empty fit window [{lo}, {hi}]")
    sel = (rho >= lo) & (rho <= hi)
    if mask is not None:
        sel &= mask
    if sel.sum() < 6:
        raise FitError(f"fit window [{lo:.3g}, {hi:.3g}] holds {int(sel.sum())} nodes, need 6")
    v = values[sel]
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise FitError("values must be positive and finite on the fit window")
    x = np.log(rho[sel])
    y = np.log(v)
    X = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ coef
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res ** 2)) / ss if ss > 0 else 1.0
    return RateFit(float(coef[0]), float(coef[1]), min(max(r2, 0.0), 1.0), (lo, hi), int(sel.sum()),
                   float(np.max(np.abs(res))))


def fit_rate(u, window=None, values=None, exclude: int = EXCLUDE_NODES) -> RateFit:
    """Fit log u against log rho on a SolutionField, skipping the nodes nearest the boundary.

    ``values`` replaces the nodal values (for instance n - u_n) on the same mesh.
    """
    mesh = u.mesh
    w = default_window(mesh) if window is None else window
    vals = u.values if values is None else values
    return fit_power_law(mesh.rho, vals, w, _edge_mask(mesh, exclude))


# ----------------------------------------------------------------------------
# sandwich


@dataclass(frozen=True)
class SandwichVerdict:
    predicted_lower: float
    predicted_upper: float
    fitted: RateFit
    inflation: float
    passed: bool
    kind: str

    @property
    def exponent(self) -> float:
        return abs(self.fitted.beta)

    def to_dict(self):
        return {"kind": self.kind, "predicted_lower": self.predicted_lower,
                "predicted_upper": self.predicted_upper, "fitted_abs_beta": self.exponent,
                "fit": self.fitted.to_dict(), "inflation": self.inflation, "pass": self.passed}


def predicted_interval(alpha: float, p: float, q: float, kind: str) -> tuple:
    """Interval for |beta|: regional [(2a-1)/(q-1), 2a/(p-1)], full [2a/(q-1), 2a/(p-1)]."""
    if p <= 1 or q <= 1:
        raise UnsupportedError("boundary rates need p, q > 1")
    upper = 2 * alpha / (p - 1)
    if kind == "regional":
        lower = (2 * alpha - 1) / (q - 1)
    elif kind == "full":
        lower = 2 * alpha / (q - 1)
    else:
        raise UnsupportedError(f"unknown operator kind {kind!r}")
    return lower, upper


def sandwich_verdict(u, f, kind: Optional[str] = None, alpha: Optional[float] = None,
                     inflation: Optional[float] = None, window=None) -> SandwichVerdict:
    if f.family != "power":
        raise UnsupportedError("rate predictions exist only for the power family")
    kind = kind or u.kind
    if alpha is None:
        raise UnsupportedError("sandwich verdict needs the fractional order")
    lo, hi = predicted_interval(alpha, f.p, f.q if f.q is not None else f.p, kind)
    if inflation is None:
        inflation = 0.05 if (kind == "regional" and hi > lo) else 0.1
    fit = fit_rate(u, window)
    e = abs(fit.beta)
    ok = (lo - inflation <= e <= hi + inflation) and fit.beta < 0
    return SandwichVerdict(lo, hi, fit, float(inflation), bool(ok), kind)


# ----------------------------------------------------------------------------
# Green bound


def _sphere_average_bound(N, alpha, r, s, rho_r, rho_s, panels=12, order=16):
    """Integral over the sphere |y| = s of the bound kernel at x = r e_1 (vectorised in s)."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.concatenate(([0.0], math.pi * 2.0 ** -np.arange(panels, -1, -1)))
    total = np.zeros_like(s)
    area = sphere_area(N - 1)
    for a, b in zip(edges[:-1], edges[1:]):
        th = 0.5 * (b - a) * (xg + 1) + a
        wt = 0.5 * (b - a) * wg * np.sin(th) ** (N - 2)
        d = np.sqrt(np.maximum(r * r + s[:, None] ** 2 - 2 * r * s[:, None] * np.cos(th), 1e-300))
        k = np.minimum(d ** (2 * alpha - N),
                       (rho_r * rho_s[:, None]) ** (2 * alpha - 1) / d ** (N - 2 + 2 * alpha))
        total += (k * wt).sum(axis=1)
    # surface measure on |y| = s: |S^{N-2}| s^{N-1} sin^{N-2}(theta) dtheta
    return total * area * s ** (N - 1)


def green_bound_ratio(G: np.ndarray, mesh: GradedMesh, alpha: float):
    """R = max_{i != j} (G_ij / h_j) / bound(x_i, x_j), its argmax, the density and the ratio matrix.

    Intervals use the pointwise bound min{|x-y|^{2a-N}, rho(x)^{2a-1} rho(y)^{2a-1} |x-y|^{2-N-2a}}.
    For balls the radial Green matrix integrates G over spheres, so the bound is
    integrated over the same spheres.
    """
    h = mesh.trapezoid_weights()
    dens = G / h[None, :]
    rho = mesh.rho
    M = mesh.M
    if mesh.domain.kind == "interval":
        N = 1
        bound = np.empty((M, M))
        for i in range(M):
            d = mesh.distances(i)[1:-1]
            d[i] = np.inf
            with np.errstate(divide="ignore"):
                bound[i] = np.minimum(d ** (2 * alpha - N),
                                      (rho[i] * rho) ** (2 * alpha - 1) / d ** (N - 2 + 2 * alpha))
    else:
        N = mesh.domain.dim
        bound = np.empty((M, M))
        for i in range(M):
            bound[i] = _sphere_average_bound(N, alpha, mesh.nodes[i], mesh.nodes, rho[i], rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = dens / bound
    np.fill_diagonal(ratio, 0.0)
    k = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    return float(ratio[k]), k, dens, ratio


def _separated(mesh: GradedMesh) -> np.ndarray:
    """Pairs with |x - y| >= max(rho(x), rho(y)) / 2, away from the diagonal."""
    rho = mesh.rho
    if mesh.domain.kind == "interval":
        d = np.abs(mesh.nodes[:, None] - mesh.nodes[None, :])
    else:
        d = np.abs(rho[:, None] - rho[None, :])
    return d >= 0.5 * np.maximum(rho[:, None], rho[None, :])


@dataclass(eq=False)
class GreenBoundReport:
    """R over all pairs i != j, and R_separated over pairs with |x-y| >= max(rho)/2.

    In one dimension with 2 alpha > 1 the first term of the bound vanishes on
    the diagonal while the Green function does not, so R grows like
    h^{1-2 alpha} on near-diagonal pairs; R_separated isolates the boundary
    factors.
    """

    R: float
    argmax: tuple
    R_refined: Optional[float]
    change: Optional[float]
    R_separated: float
    R_separated_refined: Optional[float]
    change_separated: Optional[float]
    finite: bool
    min_entry_ratio: float
    boundary_decay: bool

    def to_dict(self):
        return {"R": self.R, "argmax": [int(v) for v in self.argmax], "R_refined": self.R_refined,
                "change": self.change, "R_separated": self.R_separated,
                "R_separated_refined": self.R_separated_refined,
                "change_separated": self.change_separated, "finite": self.finite,
                "min_entry_ratio": self.min_entry_ratio, "boundary_decay": self.boundary_decay}


def _decays_toward_boundary(dens: np.ndarray, mesh: GradedMesh) -> bool:
    """Density at a fixed interior column decreases along rows moving toward the boundary."""
    j = mesh.center_index()
    col = dens[:, j]
    tail = np.flatnonzero(mesh.rho < 0.25 * mesh.domain.inradius)
    if mesh.domain.kind == "interval":
        parts = [tail[tail > j], tail[tail < j][::-1]]
    else:
        parts = [tail[tail > j]]
    return all(np.all(np.diff(col[p]) < 0) for p in parts if p.size > 1)


def _ratios(G, mesh, alpha):
    R, k, dens, ratio = green_bound_ratio(G, mesh, alpha)
    Rs = float(np.max(np.where(_separated(mesh), ratio, 0.0)))
    return R, k, dens, Rs


def green_bound_check(green, mesh: GradedMesh, alpha: float, refine: bool = True) -> GreenBoundReport:
    """Ratio R on ``mesh`` and, optionally, on the mesh with 2M nodes."""
    from .geometry import build_mesh
    from .operator import assemble
    from .solver import green_matrix
    G = green.G if hasattr(green, "G") else np.asarray(green)
    R, k, dens, Rs = _ratios(G, mesh, alpha)
    R2 = Rs2 = change = change_s = None
    if refine:
        mesh2 = build_mesh(mesh.domain, 2 * mesh.M, mesh.gamma)
        G2 = green_matrix(assemble(mesh2, alpha, "regional")).G
        R2, _, _, Rs2 = _ratios(G2, mesh2, alpha)
        change = abs(R2 - R) / R
        change_s = abs(Rs2 - Rs) / Rs
    return GreenBoundReport(R, k, R2, change, Rs, Rs2, change_s, bool(np.isfinite(R)),
                            float(G.min() / G.max()), _decays_toward_boundary(dens, mesh))


# ----------------------------------------------------------------------------
# nonexistence


def nonexistence_regime(alpha: float, q: float) -> dict:
    """Which growth conditions a (alpha, q) pair satisfies; the two are reported, not reconciled."""
    return {
        "q_le_1_plus_2alpha": bool(q <= 1 + 2 * alpha),
        "q_lt_alpha_over_1_minus_alpha": bool(q < alpha / (1 - alpha)),
        "in_range": bool(q <= 1 + 2 * alpha and q < alpha / (1 - alpha)),
        "q_lt_tail_threshold": bool(q < (1 + alpha) / (1 - alpha)),
    }


@dataclass(eq=False)
class NonexistenceReport:
    alpha: float
    q: float
    regime: dict
    c34: float
    lam: float
    levels: list
    radii: list
    layer_min: list
    layer_bound_ok: list
    exponent: Optional[float]
    predicted_exponent: float
    center: list
    center_increasing: bool
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "alpha": self.alpha, "q": self.q, "regime": self.regime, "c34": self.c34,
            "lambda": self.lam, "levels": self.levels, "radii": self.radii,
            "layer_min": self.layer_min, "layer_bound_ok": self.layer_bound_ok,
            "exponent": self.exponent, "predicted_exponent": self.predicted_exponent,
            "center": self.center, "center_increasing": self.center_increasing,
            "notes": self.notes,
        }


def nonexistence_diagnostics(fields: Sequence, f, alpha: float, lam: Optional[float] = None,
                             c34: Optional[float] = None) -> NonexistenceReport:
    """Layer minima of u_n on {r_n < rho <= 2 r_n}, r_n = (lam n)^{-(q-1)/(2a-1)}.

    c34 defaults to the smallest constant with u_n >= n - c34 n^q rho^{2a-1} on
    every level, and lam to (2^{2a} c34)^{1/(q-1)}.  The fitted exponent is the
    slope of log(layer min) against log(r_n) over levels whose layer holds a node.
    """
    if f.family != "power":
        raise UnsupportedError("layer diagnostics need the power family")
    q = float(f.q if f.q is not None else f.p)
    if q <= 1:
        raise UnsupportedError("layer diagnostics need q > 1")
    notes = []
    regime = nonexistence_regime(alpha, q)
    if not regime["in_range"]:
        notes.append("out-of-range: q violates the nonexistence growth conditions")
    mesh = fields[0].mesh
    rho = mesh.rho
    levels = [float(s.trace) for s in fields]
    if c34 is None:
        c34 = max(float(np.max((n - s.values) / (n ** q * rho ** (2 * alpha - 1))))
                  for n, s in zip(levels, fields))
    if lam is None:
        lam = (2 ** (2 * alpha) * c34) ** (1 / (q - 1))
    e = (2 * alpha - 1) / (q - 1)
    radii, mins, oks = [], [], []
    for n, s in zip(levels, fields):
        r = (lam * n) ** (-(q - 1) / (2 * alpha - 1))
        idx = mesh.layer(r, 2 * r)
        radii.append(float(r))
        if idx.size == 0:
            mins.append(float("nan"))
            oks.append(None)
            continue
        mins.append(float(s.values[idx].min()))
        oks.append(bool(np.all(s.values[idx] >= rho[idx] ** (-e) / (2 * lam))))
    good = [k for k, m in enumerate(mins) if np.isfinite(m) and m > 0]
    expo = None
    if len(good) >= 3:
        x = np.log([radii[k] for k in good])
        y = np.log([mins[k] for k in good])
        expo = float(np.polyfit(x, y, 1)[0])
    else:
        notes.append("fewer than 3 levels have mesh nodes in their layer")
    center = [s.center_value() for s in fields]
    inc = bool(np.all(np.diff(center) > 0))
    return NonexistenceReport(float(alpha), q, regime, float(c34), float(lam), levels, radii, mins,
                              oks, expo, -e, center, inc, notes)
