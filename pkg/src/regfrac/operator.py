"""Dense collocation matrices for the regional and the full fractional Laplacian.

Row i approximates

    P.V. int_Omega (u(x_i) - u(y)) |x_i - y|^{-N-2a} dy        (regional)

and the full operator adds phi(x_i) u(x_i), phi being the exterior mass.  Away
from x_i the integrand uses the piecewise-linear interpolant of the nodal
values (boundary points carry the Dirichlet trace) and the kernel moments are
closed form.  On the symmetric window |y - x_i| < min(h_left, h_right) the
interpolant is the quadratic through x_{i-1}, x_i, x_{i+1}; its odd part has zero
principal value and its even part gives a finite moment for every a in (0, 1).
The part of the longer adjacent cell outside that window is treated like a
far cell.  Every coupling to another point is therefore nonpositive and the
matrix is a nonsingular M-matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .errors import ConfigurationError, OracleError, ShapeError
from .geometry import (GradedMesh, as_alpha, phi_nodes, radial_kernel,
                       singular_coefficient)

__all__ = ["OperatorMatrix", "assemble", "apply", "validate_against_oracle", "OracleReport",
           "power_moment", "full_of_bump_power", "regional_bruteforce", "full_oracle"]

_SERIES_SWITCH = 0.1
_SERIES_TERMS = 40


def power_moment(beta: float, r):
    """((1 + r)**beta - 1) / beta, with the log1p limit at beta = 0; stable for small r."""
    r = np.asarray(r, dtype=float)
    if beta == 0.0:
        return np.log1p(r)
    return np.expm1(beta * np.log1p(r)) / beta


def _first_moment(alpha: float, r):
    """int_0^r s (1 + s)^{-1-2a} ds."""
    r = np.asarray(r, dtype=float)
    out = power_moment(1 - 2 * alpha, r) - power_moment(-2 * alpha, r)
    small = r < _SERIES_SWITCH
    if np.any(small):
        rs = r[small]
        c = 1.0
        acc = np.zeros_like(rs)
        p = rs * rs
        for k in range(_SERIES_TERMS):
            acc += c * p / (k + 2)
            c *= (-1 - 2 * alpha - k) / (k + 1)
            p = p * rs
        out = np.array(out, copy=True)
        out[small] = acc
    return out


def _cell_weights(alpha, t_near, h):
    """Weights of the near and far endpoint for cells at distance t_near of width h.

    Returns (w_near, w_far) with w_near + w_far = int t^{-1-2a} over the cell.
    """
    r = h / t_near
    scale = t_near ** (-2 * alpha)
    m0 = scale * power_moment(-2 * alpha, r)
    m1 = scale * _first_moment(alpha, r) / r
    return m0 - m1, m1


def _bubble_moment(alpha, t_near, h):
    """h**-2 * int over the cell of (t - t_near)(t_near + h - t) t^{-1-2a} dt."""
    r = np.asarray(h / t_near, dtype=float)
    out = np.empty_like(r)
    small = r < _SERIES_SWITCH
    if np.any(small):
        rs = r[small]
        c = 1.0
        acc = np.zeros_like(rs)
        p = rs.copy()
        for k in range(_SERIES_TERMS):
            acc += c * p / ((k + 2) * (k + 3))
            c *= (-1 - 2 * alpha - k) / (k + 1)
            p = p * rs
        out[small] = acc
    big = ~small
    if np.any(big):
        rb = r[big]
        # s (r - s) = -u^2 + (r + 2) u - (r + 1) with u = 1 + s
        out[big] = (-power_moment(2 - 2 * alpha, rb) + (rb + 2) * power_moment(1 - 2 * alpha, rb)
                    - (rb + 1) * power_moment(-2 * alpha, rb)) / rb ** 2
    return t_near ** (-2 * alpha) * out


def _divided_difference(xa, xb, xc):
    """Coefficients of u_a, u_b, u_c in the second divided difference f[a, b, c]."""
    return (1.0 / ((xa - xb) * (xa - xc)), 1.0 / ((xb - xa) * (xb - xc)),
            1.0 / ((xc - xa) * (xc - xb)))


def _row_weights_flat(alpha, d, widths, p, scale=1.0, correct=True):
    """Weights on all M+2 points for the flat kernel scale*|t|^{-1-2a} at point p.

    ``d`` are distances from point p to every point, ``widths`` the M+1 cells.
    With ``correct`` each far cell also integrates the quadratic bubble of the
    interpolation error, its curvature taken from the three points centred on
    the cell end nearer to p.
    """
    n_pts = d.size
    w = np.zeros(n_pts)
    pos = np.where(np.arange(n_pts) < p, -d, d)
    # far cells on the right: k = p+1 .. M, near end k, far end k+1
    k = np.arange(p + 1, n_pts - 1)
    if k.size:
        wn, wf = _cell_weights(alpha, d[k], widths[k])
        np.add.at(w, k, wn)
        np.add.at(w, k + 1, wf)
        if correct:
            b = widths[k] ** 2 * _bubble_moment(alpha, d[k], widths[k])
            ca, cb, cc = _divided_difference(pos[k - 1], pos[k], pos[k + 1])
            np.add.at(w, k - 1, -b * ca)
            np.add.at(w, k, -b * cb)
            np.add.at(w, k + 1, -b * cc)
    # far cells on the left: k = 0 .. p-2, near end k+1, far end k
    k = np.arange(0, p - 1)
    if k.size:
        wn, wf = _cell_weights(alpha, d[k + 1], widths[k])
        np.add.at(w, k + 1, wn)
        np.add.at(w, k, wf)
        if correct:
            b = widths[k] ** 2 * _bubble_moment(alpha, d[k + 1], widths[k])
            ca, cb, cc = _divided_difference(pos[k], pos[k + 1], pos[k + 2])
            np.add.at(w, k, -b * ca)
            np.add.at(w, k + 1, -b * cb)
            np.add.at(w, k + 2, -b * cc)
    hl, hr = widths[p - 1], widths[p]
    hs = min(hl, hr)
    p2 = 2.0 * hs ** (2 - 2 * alpha) / (2 - 2 * alpha)
    w[p + 1] += p2 / (hr * (hr + hl))
    w[p - 1] += p2 / (hl * (hr + hl))
    if hl != hr:
        h_long, nb = (hr, p + 1) if hr > hl else (hl, p - 1)
        J = hs ** (1 - 2 * alpha) * power_moment(1 - 2 * alpha, h_long / hs - 1.0)
        w[nb] += J / h_long
    return w * scale


def _row_weights_radial(alpha, N, mesh, p, n_far=8, n_near=24):
    """Radial weights: flat singular part c_N|r-s|^{-1-2a} plus Gauss quadrature of the remainder."""
    d = mesh.distances(p - 1)
    widths = mesh.cell_widths()
    cN = singular_coefficient(N, alpha)
    w = _row_weights_flat(alpha, d, widths, p, scale=cN)
    pts = mesh.points()
    r_i = pts[p]
    xf, wf = np.polynomial.legendre.leggauss(n_far)
    xn, wn = np.polynomial.legendre.leggauss(n_near)
    for k in range(widths.size):
        a, b = pts[k], pts[k + 1]
        x, ww = (xn, wn) if k in (p - 1, p) else (xf, wf)
        s = 0.5 * (b - a) * (x + 1) + a
        jac = 0.5 * (b - a) * ww
        rem = radial_kernel(N, alpha, r_i, s) - cN * np.abs(r_i - s) ** (-1 - 2 * alpha)
        lam = (s - a) / (b - a)
        w[k] += np.sum(jac * rem * (1 - lam))
        w[k + 1] += np.sum(jac * rem * lam)
    return w


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Assembled operator over the interior nodes.

    ``A`` acts on interior values, ``coupling`` (M x n_trace) multiplies the
    boundary trace, ``phi`` is the exterior mass at the nodes and ``row_sum``
    is A @ 1 + coupling @ 1 (zero for the regional kind, phi for the full kind).
    """

    kind: str
    alpha: float
    mesh: GradedMesh
    A: np.ndarray
    coupling: np.ndarray
    phi: np.ndarray
    row_sum: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_trace(self) -> int:
        return self.coupling.shape[1]

    def apply(self, u, trace):
        return apply(self, u, trace)

    def apply_constant_trace(self, u, n: float):
        """A u + coupling * n, evaluated as A (u - n) + row_sum * n to avoid cancellation."""
        u = np.asarray(u, dtype=float)
        return self.A @ (u - n) + self.row_sum * n

    def apply_differences(self, u, trace):
        """A u + coupling @ trace in difference form.

        Row i is sum_j A_ij (u_j - u_i) + sum_k C_ik (t_k - u_i) + row_sum_i u_i,
        which avoids cancelling large terms when u is large but slowly varying.
        """
        u = np.asarray(u, dtype=float)
        t = self.trace_vector(trace)
        if "offdiag" not in self._cache:
            off = np.array(self.A)
            off[np.diag_indices_from(off)] = 0.0
            self._cache["offdiag"] = off
        off = self._cache["offdiag"]
        out = (off * (u[None, :] - u[:, None])).sum(axis=1)
        out += (self.coupling * (t[None, :] - u[:, None])).sum(axis=1)
        return out + self.row_sum * u

    def trace_vector(self, trace) -> np.ndarray:
        t = np.asarray(trace, dtype=float)
        if t.ndim == 0:
            t = np.full(self.n_trace, float(t))
        if t.shape != (self.n_trace,):
            raise ShapeError(f"trace must have {self.n_trace} entries, got shape {t.shape}")
        return t

    def max_row_abs_sum(self) -> float:
        return float(np.max(np.abs(self.A).sum(axis=1) + np.abs(self.coupling).sum(axis=1)))

    def lu(self):
        """LU factors of A, computed once."""
        if "lu" not in self._cache:
            from scipy.linalg import lu_factor
            self._cache["lu"] = lu_factor(self.A)
        return self._cache["lu"]

    def offdiag_max(self) -> float:
        off = self.A - np.diag(np.diag(self.A))
        return float(off.max())


def assemble(mesh: GradedMesh, alpha, kind: str = "regional") -> OperatorMatrix:
    """Collocation matrix of the regional or full fractional Laplacian on ``mesh``."""
    alpha = as_alpha(alpha)
    if kind not in ("regional", "full"):
        raise ConfigurationError(f"operator kind must be 'regional' or 'full', got {kind!r}")
    M = mesh.M
    dom = mesh.domain
    widths = mesh.cell_widths()
    A = np.zeros((M, M))
    if dom.kind == "interval":
        C = np.zeros((M, 2))
    else:
        C = np.zeros((M, 1))
    for i in range(M):
        p = i + 1
        if dom.kind == "interval":
            w = _row_weights_flat(alpha, mesh.distances(i), widths, p)
        elif dom.dim == 1:
            # a 1-ball is an interval seen from its centre
            w = _row_weights_flat(alpha, mesh.distances(i), widths, p)
            pts = mesh.points()
            xf, wf = np.polynomial.legendre.leggauss(8)
            for k in range(widths.size):
                a, b = pts[k], pts[k + 1]
                s = 0.5 * (b - a) * (xf + 1) + a
                jac = 0.5 * (b - a) * wf * (pts[p] + s) ** (-1 - 2 * alpha)
                lam = (s - a) / (b - a)
                w[k] += np.sum(jac * (1 - lam))
                w[k + 1] += np.sum(jac * lam)
        else:
            w = _row_weights_radial(alpha, dom.dim, mesh, p)
        if dom.kind == "ball":
            # even symmetry: the centre carries the value of the first node
            w[1] += w[0]
            w[0] = 0.0
            row = -w[1:-1]
            row[i] = 0.0
            A[i] = row
            A[i, i] = w.sum() - w[p]
            C[i, 0] = -w[-1]
        else:
            row = -w[1:-1]
            row[i] = 0.0
            A[i] = row
            A[i, i] = w.sum() - w[p]
            C[i, 0] = -w[0]
            C[i, 1] = -w[-1]
    ph = np.asarray(phi_nodes(mesh, alpha), dtype=float)
    if kind == "full":
        A[np.diag_indices(M)] += ph
        row_sum = ph.copy()
    else:
        row_sum = np.zeros(M)
    for arr in (A, C, ph, row_sum):
        arr.setflags(write=False)
    return OperatorMatrix(kind, alpha, mesh, A, C, ph, row_sum)


def apply(op: OperatorMatrix, u, trace) -> np.ndarray:
    """A u + coupling @ trace; linear in (u, trace)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (op.mesh.M,):
        raise ShapeError(f"nodal vector must have shape ({op.mesh.M},), got {u.shape}")
    t = op.trace_vector(trace)
    return op.A @ u + op.coupling @ t


# ----------------------------------------------------------------------------
# independent oracles


def full_of_bump_power(alpha, N: int = 1) -> float:
    """Exact (unnormalised) full fractional Laplacian of (1-|x|^2)_+^alpha on the unit ball."""
    from scipy.special import gamma as G
    alpha = as_alpha(alpha)
    return G(1 + alpha) * abs(G(-alpha)) * math.pi ** (N / 2) / G(N / 2)


def full_oracle(fn, alpha, x: float, support=(-1.0, 1.0), breakpoints=(), dps: int = 30,
                head: float = 1e-4) -> float:
    """(-Delta)^alpha fn(x) for fn vanishing outside ``support``, by tanh-sinh quadrature.

    Uses the symmetrised form int_0^inf (2 f(x) - f(x+t) - f(x-t)) t^{-1-2a} dt in
    extended precision.  On [0, head] the second difference is replaced by its
    Taylor term -f''(x) t^2; the tail beyond the support is closed form.
    """
    import mpmath as mp
    alpha = as_alpha(alpha)
    lo, hi = support
    with mp.workdps(dps):
        a = mp.mpf(alpha)
        xm = mp.mpf(x)
        fx = fn(xm)

        def integrand(t):
            return (2 * fx - fn(xm + t) - fn(xm - t)) * t ** (-1 - 2 * a)

        far = mp.mpf(max(hi - x, x - lo))
        kinks = {mp.mpf(c) for c in (hi - x, x - lo) if c > 0}
        kinks |= {mp.mpf(abs(b - x)) for b in breakpoints if abs(b - x) > 0}
        delta = mp.mpf(head) * min([mp.mpf(1)] + list(kinks))
        cuts = sorted({delta, far} | {c for c in kinks if delta < c < far})
        val, err = mp.quad(integrand, cuts, error=True, maxdegree=10)
        f2 = mp.diff(fn, xm, 2)
        val += -f2 * delta ** (2 - 2 * a) / (2 - 2 * a)
        val += 2 * fx * far ** (-2 * a) / (2 * a)
        if not mp.isfinite(val) or abs(err) > 1e-9 * max(1, abs(val)):
            raise OracleError(f"oracle quadrature did not converge at x={x} (err={err})")
        return float(val)


def regional_bruteforce(fn, alpha, x: float, a: float = -1.0, b: float = 1.0,
                        n: int = 200_000, head: float = 1e-3) -> float:
    """Regional operator of a smooth ``fn`` at x by direct quadrature.

    The principal value is symmetrised over |y - x| < min(x - a, b - x).  Below
    t = head * min(x - a, b - x) the second difference is replaced by its
    Taylor term -f''(x) t^2; the rest is a trapezoid rule on a logarithmic grid.
    """
    alpha = as_alpha(alpha)
    x = float(x)
    fx = float(fn(np.array([x]))[0])
    d_sym = min(x - a, b - x)
    d_far = max(x - a, b - x)
    sgn = 1.0 if (b - x) > (x - a) else -1.0
    delta = head * d_sym
    f2 = float((fn(np.array([x + delta]))[0] + fn(np.array([x - delta]))[0] - 2 * fx) / delta ** 2)
    total = -f2 * delta ** (2 - 2 * alpha) / (2 - 2 * alpha)
    t = np.geomspace(delta, d_sym, n)
    g = (2 * fx - fn(x + t) - fn(x - t)) * t ** (-2 * alpha)
    total += trapezoid(g, np.log(t))
    if d_far > d_sym:
        t = np.linspace(d_sym, d_far, n)
        g = (fx - fn(x + sgn * t)) * t ** (-1 - 2 * alpha)
        total += trapezoid(g, t)
    return float(total)


@dataclass
class OracleReport:
    probes: np.ndarray
    nodes: np.ndarray
    computed: np.ndarray
    exact: np.ndarray
    rel_errors: np.ndarray

    @property
    def max_error(self) -> float:
        return float(self.rel_errors.max())


def validate_against_oracle(op: OperatorMatrix, test_fn, probes, oracle, trace=0.0,
                            floor: float = 1e-2) -> OracleReport:
    """Compare the discrete image of ``test_fn`` with ``oracle(x)`` at the nodes nearest ``probes``.

    Relative errors use max(|exact|, floor * max|exact|) in the denominator so
    that probes near a sign change of the image do not dominate.
    """
    mesh = op.mesh
    probes = np.atleast_1d(np.asarray(probes, dtype=float))
    idx = np.array([int(np.argmin(np.abs(mesh.nodes - p))) for p in probes])
    u = np.asarray(test_fn(mesh.nodes), dtype=float)
    image = apply(op, u, trace)
    computed = image[idx]
    exact = np.array([oracle(float(mesh.nodes[j])) for j in idx])
    denom = np.maximum(np.abs(exact), floor * np.abs(exact).max())
    rel = np.abs(computed - exact) / denom
    return OracleReport(probes, mesh.nodes[idx], computed, exact, rel)
