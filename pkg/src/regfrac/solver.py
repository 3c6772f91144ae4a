"""Linear Dirichlet solves, monotone iteration for the semilinear problem and the
blow-up limit driver.

The semilinear problem on the mesh is

    A u + C t + f(u) = g,

with ``t`` the Dirichlet trace.  Three iteration policies are available:

``paper-exact``
    (A + b2 I) v_m = b2 v_{m-1} - f(v_{m-1}) + g - C t from v_0 = -b1 with the
    a-priori box b1 and b2 = Lip(f, [-b1, b1]) + b1.
``adaptive``
    the same linearisation, but b2 is halved whenever the new iterate is still
    a discrete subsolution and restored otherwise.
``bracket``
    a decreasing Newton sequence from a supersolution paired with an
    increasing secant sequence from a subsolution.  For convex f both stay on
    their side of the solution, so the solution is certified to lie between
    them.  This is the default: the fixed-b2 iterations contract at a rate
    1 - O(1/b2), which is hopeless once f(n) is large.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import (ConfigurationError, InvariantBreachError, NonconvergenceError,
                     ShapeError, UnsupportedError)
from .geometry import sphere_area
from .operator import OperatorMatrix

__all__ = [
    "Nonlinearity",
    "SourceField",
    "SolverConfig",
    "SolutionField",
    "GreenMatrix",
    "LimitReport",
    "solve_linear_dirichlet",
    "green_matrix",
    "solve_semilinear",
    "blowup_limit",
    "minimality_check",
    "MinimalityReport",
]

log = logging.getLogger(__name__)

MONO_TOL = 1e-10
# center increments over the last k levels must keep at least this fraction of
# their size for the nonexistence signal (convergent runs decay geometrically)
DIVERGENCE_DECAY = 0.5
# row-scaled equation residual above which a step-size stop is reported as stagnation
STALL_TOL = 1e-6


# ----------------------------------------------------------------------------
# nonlinearity


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Nondecreasing f with f(0) >= 0.

    The power family is f(s) = c * max(s, 0)**p; ``q`` is the exponent of the
    matching lower growth bound (q = p for a pure power).
    """

    family: str
    c: float = 1.0
    p: float = 1.0
    q: Optional[float] = None
    fn: Optional[Callable] = field(default=None, repr=False)
    dfn: Optional[Callable] = field(default=None, repr=False)
    convex: bool = False

    @classmethod
    def power(cls, c: float = 1.0, p: float = 2.0, q: Optional[float] = None):
        if not (c > 0) or not (p > 0):
            raise ConfigurationError(f"power nonlinearity needs c > 0 and p > 0, got c={c}, p={p}")
        q = float(p if q is None else q)
        return cls("power", float(c), float(p), q, convex=p >= 1)

    @classmethod
    def zero(cls):
        return cls("zero", 0.0, 1.0, None, convex=True)

    @classmethod
    def custom(cls, fn, dfn=None, convex: bool = False, check_range=(-10.0, 10.0)):
        f = cls("custom", fn=fn, dfn=dfn, convex=convex)
        f.check(*check_range)
        return f

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.family == "power":
            return self.c * np.maximum(s, 0.0) ** self.p
        if self.family == "zero":
            return np.zeros_like(s)
        return np.asarray(self.fn(s), dtype=float)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.family == "power":
            with np.errstate(divide="ignore"):
                return np.where(s > 0, self.c * self.p * np.maximum(s, 0.0) ** (self.p - 1), 0.0)
        if self.family == "zero":
            return np.zeros_like(s)
        if self.dfn is not None:
            return np.asarray(self.dfn(s), dtype=float)
        h = 1e-6 * np.maximum(1.0, np.abs(s))
        return (self(s + h) - self(s - h)) / (2 * h)

    def lipschitz_on(self, b: float) -> float:
        """Upper bound for the Lipschitz constant of f on [-b, b]."""
        b = abs(float(b))
        if self.family == "zero":
            return 0.0
        if self.family == "power":
            if self.p < 1:
                return math.inf
            return self.c * self.p * b ** (self.p - 1)
        s = np.linspace(-b, b, 1001)
        return float(np.max(np.abs(np.diff(self(s)) / np.diff(s)))) * 1.1

    def check(self, lo: float, hi: float, n: int = 1000):
        """Spot-check monotonicity and f(0) >= 0 on n points of [lo, hi]."""
        s = np.linspace(lo, hi, n)
        v = self(s)
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("nonlinearity returned non-finite values")
        if np.any(np.diff(v) < -1e-12 * np.maximum(1.0, np.abs(v[1:]))):
            raise ConfigurationError("nonlinearity is not nondecreasing")
        if float(self(np.array(0.0))) < 0:
            raise ConfigurationError("nonlinearity must satisfy f(0) >= 0")
        return True

    def to_dict(self):
        return {"family": self.family, "c": self.c, "p": self.p, "q": self.q}


# ----------------------------------------------------------------------------
# data


@dataclass(frozen=True, eq=False)
class SourceField:
    """Right-hand side g and Dirichlet trace.

    ``g`` is a scalar, a nodal array or a callable of the node coordinates.
    ``trace`` is a constant n or a callable xi of position; for a callable the
    nodal values of xi serve as its interior extension.
    """

    g: object = 0.0
    trace: object = 0.0

    @property
    def constant_trace(self) -> bool:
        return not callable(self.trace)

    def g_vector(self, mesh) -> np.ndarray:
        if callable(self.g):
            v = np.asarray(self.g(mesh.nodes), dtype=float)
        else:
            v = np.asarray(self.g, dtype=float)
        if v.ndim == 0:
            v = np.full(mesh.M, float(v))
        if v.shape != (mesh.M,):
            raise ShapeError(f"source must have {mesh.M} entries, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("source field has non-finite values")
        return v

    def trace_values(self, mesh) -> np.ndarray:
        if callable(self.trace):
            t = np.asarray(self.trace(mesh.boundary_nodes), dtype=float)
        else:
            t = np.full(mesh.boundary_nodes.size, float(self.trace))
        if not np.all(np.isfinite(t)):
            raise ConfigurationError("boundary trace has non-finite values")
        return t

    def extension(self, mesh) -> np.ndarray:
        if callable(self.trace):
            return np.asarray(self.trace(mesh.nodes), dtype=float)
        return np.full(mesh.M, float(self.trace))


def _shift(op: OperatorMatrix, src: SourceField):
    """Base vector b and r = A b + C t, so that A u + C t = A (u - b) + r.

    For a constant trace b = n and r = row_sum * n exactly, which avoids the
    cancellation between A u and C t when n is large.
    """
    mesh = op.mesh
    base = src.extension(mesh)
    if src.constant_trace:
        r = op.row_sum * float(src.trace)
    else:
        r = op.A @ base + op.coupling @ src.trace_values(mesh)
    return base, r


@dataclass(frozen=True)
class SolverConfig:
    tol_fixed_point: float = 1e-10
    max_iter: int = 20000
    b2_policy: str = "bracket"
    n0: float = 1.0
    n_factor: float = 2.0
    n_cap: float = 2.0 ** 14
    tol_limit: float = 1e-6
    interior_window: float = 0.2
    divergence_levels: int = 4

    def __post_init__(self):
        if not (self.tol_fixed_point > 0 and self.tol_limit > 0):
            raise ConfigurationError("tolerances must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be positive")
        if self.b2_policy not in ("paper-exact", "adaptive", "bracket"):
            raise ConfigurationError(f"unknown b2 policy {self.b2_policy!r}")
        if not (self.n0 > 0 and self.n_factor > 1 and self.n_cap >= self.n0):
            raise ConfigurationError("n schedule must be increasing: n0 > 0, factor > 1, cap >= n0")
        if not (0 <= self.interior_window < 1):
            raise ConfigurationError("interior window is a fraction of the inradius in [0, 1)")
        if self.divergence_levels < 2:
            raise ConfigurationError("divergence_levels must be at least 2")

    def schedule(self):
        out = []
        n = float(self.n0)
        while n <= self.n_cap * (1 + 1e-12):
            out.append(n)
            n *= self.n_factor
        return out


@dataclass(eq=False)
class SolutionField:
    mesh: object
    values: np.ndarray
    trace: object
    kind: str
    iterations: int = 0
    residual: float = 0.0
    monotone: bool = True
    equation_residual: float = 0.0
    policy: str = "direct"
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.trace if not callable(self.trace) else None

    def center_value(self) -> float:
        return float(self.values[self.mesh.center_index()])


def _defect(op, f, g, t, u):
    """A u + C t + f(u) - g, positive for supersolutions."""
    return op.apply_differences(u, t) + f(u) - g


def _refined_solve(mat, rhs, steps: int = 2):
    """Dense solve followed by iterative refinement.

    Graded meshes make the diagonal span many orders of magnitude; refinement
    restores componentwise accuracy for the small interior corrections.
    """
    lu = lu_factor(mat)
    x = lu_solve(lu, rhs)
    for _ in range(steps):
        x = x + lu_solve(lu, rhs - mat @ x)
    return x


def _row_scale(op, u):
    """Per-row magnitude diag(A) max(1, |u|) used to judge defects."""
    return np.abs(op.A.diagonal()) * np.maximum(1.0, np.abs(u))


def _equation_residual(op, f, src, u):
    """max_i |A u + C t + f(u) - g|_i / (A_ii max(1, |u_i|))."""
    res = _defect(op, f, src.g_vector(op.mesh), src.trace_values(op.mesh), u)
    return float(np.max(np.abs(res) / _row_scale(op, u)))


# ----------------------------------------------------------------------------
# linear problem and Green matrix


def solve_linear_dirichlet(op: OperatorMatrix, src: SourceField) -> SolutionField:
    """Solve A u + C t = g by the cached LU factors of A."""
    mesh = op.mesh
    g = src.g_vector(mesh)
    base, r = _shift(op, src)
    u = base + lu_solve(op.lu(), g - r)
    if not np.all(np.isfinite(u)):
        raise NonconvergenceError("linear solve produced non-finite values (singular operator?)")
    res = float(np.max(np.abs(op.A @ (u - base) + r - g)))
    return SolutionField(mesh, u, src.trace, op.kind, iterations=1, residual=res,
                         equation_residual=res)


@dataclass(eq=False)
class GreenMatrix:
    """Discrete Green operator: G = A^{-1}.

    ``symmetry_defect`` is max|K - K^T| / max|K| for the kernel density
    K = G W^{-1} (W the trapezoid weights), which approximates the symmetric
    Green kernel; ``matrix_defect`` is the same quantity for G itself.
    """

    G: np.ndarray
    weights: np.ndarray
    symmetry_defect: float
    matrix_defect: float
    min_ratio: float
    warnings: list

    def density(self) -> np.ndarray:
        return self.G / self.weights[None, :]

    def __matmul__(self, v):
        return self.G @ v


def green_matrix(op: OperatorMatrix) -> GreenMatrix:
    notes = []
    if op.kind != "regional":
        notes.append("Green matrix of the full operator; decay bounds refer to the regional kind")
    if op.alpha <= 0.5:
        notes.append("alpha <= 1/2: Green decay bounds are not asserted in this regime")
    mesh = op.mesh
    G = lu_solve(op.lu(), np.eye(mesh.M))
    w = mesh.trapezoid_weights()
    if mesh.domain.kind == "ball":
        w = w * sphere_area(mesh.domain.dim) * mesh.nodes ** (mesh.domain.dim - 1)
    K = G / w[None, :]
    sym = float(np.max(np.abs(K - K.T)) / np.max(np.abs(K)))
    msym = float(np.max(np.abs(G - G.T)) / np.max(np.abs(G)))
    ratio = float(G.min() / G.max())
    G.setflags(write=False)
    return GreenMatrix(G, w, sym, msym, ratio, notes)


# ----------------------------------------------------------------------------
# semilinear problem


def _a_priori_box(op, f, src):
    """b1 = max(n + max G[g+], |min(n - G[g-] - f(n) G[1])|) and the lower Green bound."""
    mesh = op.mesh
    g = src.g_vector(mesh)
    lu = op.lu()
    gp = lu_solve(lu, np.maximum(g, 0.0))
    gm = lu_solve(lu, np.maximum(-g, 0.0))
    g1 = lu_solve(lu, np.ones(mesh.M))
    tr = src.trace_values(mesh)
    n_hi, n_lo = float(tr.max()), float(tr.min())
    lin = solve_linear_dirichlet(op, SourceField(0.0, src.trace)).values
    lower = lin - gm - float(f(np.array(n_hi))) * g1
    upper = lin + gp
    b1 = max(n_hi + float(gp.max()), abs(float(lower.min())), abs(n_lo))
    return b1, lower, upper


def _check_monotone(new, old, what, m):
    slack = MONO_TOL * np.maximum(1.0, np.abs(new))
    if np.any(new < old - slack):
        k = int(np.argmax(old - new - slack))
        raise InvariantBreachError(
            f"{what} sequence decreased at iteration {m}, node {k}: {old[k]!r} -> {new[k]!r}")


def _fixed_b2(op, f, src, cfg, v0=None):
    mesh = op.mesh
    g = src.g_vector(mesh)
    tr = src.trace_values(mesh)
    b1, lower, _ = _a_priori_box(op, f, src)
    L = f.lipschitz_on(b1)
    if not math.isfinite(L):
        raise UnsupportedError("nonlinearity is not Lipschitz on the a-priori box")
    b2_paper = L + b1
    v = np.full(mesh.M, -b1) if v0 is None else np.array(v0, dtype=float)
    adaptive = cfg.b2_policy == "adaptive"
    b2 = b2_paper
    lus = {}

    def step(v, b2):
        # (A + b2) v_new = b2 v - f(v) + g - C t, written as a correction of v
        if b2 not in lus:
            mat = op.A + b2 * np.eye(mesh.M)
            lus[b2] = (mat, lu_factor(mat))
        mat, lu = lus[b2]
        d = _defect(op, f, g, tr, v)
        x = lu_solve(lu, d)
        x = x + lu_solve(lu, d - mat @ x)
        return v - x

    def is_sub(w):
        return np.all(_defect(op, f, g, tr, w) <= 1e-13 * _row_scale(op, w))

    for m in range(1, cfg.max_iter + 1):
        if adaptive and b2 / 2 >= 1e-8 * b2_paper:
            trial = step(v, b2 / 2)
            if np.all(trial >= v - MONO_TOL * np.maximum(1.0, np.abs(trial))) and is_sub(trial):
                b2 /= 2
                new = trial
            else:
                b2 = min(b2 * 2, b2_paper)
                new = step(v, b2)
        else:
            new = step(v, b2)
        _check_monotone(new, v, "fixed-point", m)
        delta = float(np.max(np.abs(new - v)))
        v = new
        if delta <= cfg.tol_fixed_point * max(1.0, float(np.max(np.abs(v)))):
            eq = _equation_residual(op, f, src, v)
            if eq > STALL_TOL:
                # steps are below rounding relative to b2: stagnation, not convergence
                raise NonconvergenceError(
                    f"monotone iteration stalled after {m} steps with equation residual {eq:.3g} "
                    f"(b2={b2:.3g})", residual=eq, iterations=m)
            return SolutionField(mesh, v, src.trace, op.kind, iterations=m, residual=delta,
                                 monotone=True, equation_residual=eq, policy=cfg.b2_policy)
    raise NonconvergenceError(
        f"monotone iteration did not converge in {cfg.max_iter} steps (b2={b2_paper:.3g})",
        residual=delta, iterations=cfg.max_iter)


def _supersolution(op, f, src):
    """n + G[g+] (or its analogue for a function trace): a discrete supersolution when f >= 0 there."""
    mesh = op.mesh
    g = src.g_vector(mesh)
    lin = solve_linear_dirichlet(op, SourceField(0.0, src.trace)).values
    return lin + lu_solve(op.lu(), np.maximum(g, 0.0))


def _bracket(op, f, src, cfg, lower=None, upper=None):
    mesh = op.mesh
    g = src.g_vector(mesh)
    tr = src.trace_values(mesh)
    A = op.A
    W = _supersolution(op, f, src) if upper is None else np.array(upper, dtype=float)
    if float(np.min(f(W))) < 0:
        raise UnsupportedError("bracket policy needs f >= 0 on the supersolution")
    if lower is None:
        _, lower, _ = _a_priori_box(op, f, src)
    v = np.minimum(np.array(lower, dtype=float), W)
    width = math.inf
    w_done = False
    for m in range(1, cfg.max_iter + 1):
        if not w_done:
            D = f.derivative(W)
            Wn = W - _refined_solve(A + np.diag(D), _defect(op, f, g, tr, W))
            _check_monotone(W, Wn, "supersolution", m)
            Wn = np.minimum(Wn, W)
            w_step = float(np.max(np.abs(Wn - W)))
            W = Wn
            w_done = w_step <= 1e-3 * cfg.tol_fixed_point * max(1.0, float(np.max(np.abs(W))))
        gap = W - v
        fw, fv = f(W), f(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            D = np.where(gap > 1e-12 * np.maximum(1.0, np.abs(W)), (fw - fv) / gap, f.derivative(W))
        vn = v - _refined_solve(A + np.diag(D), _defect(op, f, g, tr, v))
        _check_monotone(vn, v, "subsolution", m)
        v = np.minimum(np.maximum(vn, v), W)
        width = float(np.max((W - v) / np.maximum(1.0, np.abs(W))))
        if width <= cfg.tol_fixed_point:
            u = 0.5 * (v + W)
            return SolutionField(mesh, u, src.trace, op.kind, iterations=m, residual=width,
                                 monotone=True, equation_residual=_equation_residual(op, f, src, u),
                                 policy="bracket", lower=v, upper=W)
    raise NonconvergenceError(f"bracket iteration did not close in {cfg.max_iter} steps",
                              residual=width, iterations=cfg.max_iter)


def solve_semilinear(op: OperatorMatrix, f: Nonlinearity, src: SourceField,
                     cfg: SolverConfig = SolverConfig(), lower=None, upper=None) -> SolutionField:
    """Solve A u + C t + f(u) = g by monotone iteration.

    ``lower``/``upper`` optionally supply a known discrete sub/supersolution
    for the bracket policy (for example the previous level of a blow-up run).
    """
    if f.family == "zero":
        sol = solve_linear_dirichlet(op, src)
        sol.policy = "linear"
        return sol
    policy = cfg.b2_policy
    if policy == "bracket" and not f.convex:
        log.info("nonlinearity not declared convex; using the adaptive policy")
        policy = "adaptive"
    if policy == "bracket":
        return _bracket(op, f, src, cfg, lower, upper)
    return _fixed_b2(op, f, src, SolverConfig(**{**cfg.__dict__, "b2_policy": policy}), lower)


# ----------------------------------------------------------------------------
# blow-up limit


@dataclass(eq=False)
class LimitReport:
    levels: list
    center: list
    interior_change: list
    converged: bool
    nonexistence: bool
    experimental: bool
    notes: list
    fields: list = field(repr=False, default_factory=list)

    def increments(self):
        return list(np.diff(self.center))

    def to_dict(self):
        return {
            "levels": [float(n) for n in self.levels],
            "center": [float(c) for c in self.center],
            "interior_change": [float(d) for d in self.interior_change],
            "converged": bool(self.converged),
            "nonexistence": bool(self.nonexistence),
            "experimental": bool(self.experimental),
            "notes": list(self.notes),
        }


def _divergence_signal(center, k):
    """True when the last k+1 center increments are positive and have not decayed.

    Decay is measured as d[-1] / d[-(k+1)]; a limit that exists drives it to
    zero geometrically, while logarithmic or faster growth keeps it near or
    above one.
    """
    d = np.diff(center)
    if d.size < k + 1:
        return False
    tail = d[-(k + 1):]
    return bool(np.all(tail > 0) and tail[-1] >= DIVERGENCE_DECAY * tail[0])


def blowup_limit(op: OperatorMatrix, f: Nonlinearity, cfg: SolverConfig = SolverConfig(),
                 stop_on_convergence: bool = True):
    """Run the truncated problems u = n on the boundary along the n schedule.

    Returns the last SolutionField and a LimitReport.  Convergence means the
    sup difference between consecutive levels on the inner window is at most
    tol_limit relative to the sup of u there.  Nonexistence is signalled when,
    at the last level run, the center increments over the final
    ``divergence_levels`` doublings are positive and have not decayed.
    """
    if f.family == "zero":
        raise ConfigurationError("blow-up driver needs a nonzero nonlinearity (no supersolution for f = 0)")
    if op.kind == "regional" and op.alpha <= 0.5:
        raise ConfigurationError("regional blow-up requires alpha > 1/2")
    notes = []
    experimental = False
    if f.family != "power":
        experimental = True
        notes.append("non-power nonlinearity: experimental")
    elif op.kind == "regional" and f.p <= 1 + 2 * op.alpha:
        experimental = True
        notes.append(f"p={f.p:g} <= 1 + 2 alpha: outside the proven existence range")
    mesh = op.mesh
    win = mesh.window(cfg.interior_window * mesh.domain.inradius)
    ci = mesh.center_index()
    levels, center, change, fields = [], [], [], []
    prev = None
    converged = nonexist = False
    for n in cfg.schedule():
        src = SourceField(0.0, n)
        sol = solve_semilinear(op, f, src, cfg, lower=None if prev is None else prev.values)
        if prev is not None:
            dv = sol.values - prev.values
            slack = MONO_TOL * np.maximum(1.0, np.abs(sol.values))
            if np.any(dv < -slack):
                raise InvariantBreachError(f"u_n decreased in n between levels {levels[-1]:g} and {n:g}")
            change.append(float(np.max(np.abs(dv[win])) / np.max(np.abs(sol.values[win]))))
        levels.append(n)
        center.append(float(sol.values[ci]))
        fields.append(sol)
        log.info("level n=%g center=%.10g its=%d", n, center[-1], sol.iterations)
        prev = sol
        if change and change[-1] <= cfg.tol_limit:
            converged = True
            if stop_on_convergence:
                break
    nonexist = _divergence_signal(center, cfg.divergence_levels)
    if nonexist:
        notes.append("nonexistence: center increments have not decayed over the last "
                     f"{cfg.divergence_levels} levels (finite-n proxy)")
    report = LimitReport(levels, center, change, converged and not nonexist, nonexist,
                         experimental, notes, fields)
    return prev, report


# ----------------------------------------------------------------------------
# minimality


@dataclass(eq=False)
class MinimalityReport:
    lam: float
    passed: bool
    limit_below_barrier: float
    limit_below_decreasing: float
    decreasing: SolutionField

    def to_dict(self):
        return {"lambda": self.lam, "pass": bool(self.passed),
                "max_excess_over_barrier": self.limit_below_barrier,
                "max_excess_over_decreasing": self.limit_below_decreasing}


def minimality_check(op: OperatorMatrix, f: Nonlinearity, cfg: SolverConfig, barrier_values,
                     lam: float, limit: SolutionField, n_trace: Optional[float] = None,
                     tol: float = 1e-8) -> MinimalityReport:
    """Decreasing iteration from the supersolution lam * V and comparison with u_inf.

    The decreasing sequence is the Newton branch of the bracket iteration with
    trace ``n_trace`` (default: the last level of the limit run), started at
    min(lam V, n_trace).  Raises InvariantBreachError if u_inf exceeds either
    lam V or the decreasing limit by more than ``tol``.
    """
    V = lam * np.asarray(barrier_values, dtype=float)
    n = float(limit.trace if n_trace is None else n_trace)
    start = np.minimum(V, n)
    src = SourceField(0.0, n)
    res = op.apply_constant_trace(start, n) + f(start)
    if np.any(res < -1e-8 * np.maximum(1.0, np.abs(start))):
        warnings.warn("lam V is not a discrete supersolution at every node", RuntimeWarning)
    dec = _bracket(op, f, src, cfg, lower=limit.values, upper=start)
    over_v = float(np.max(limit.values - V))
    over_d = float(np.max(limit.values - dec.upper))
    passed = over_v <= tol and over_d <= tol
    if not passed:
        raise InvariantBreachError(
            f"minimality comparison failed: u_inf - lam V <= {over_v:.3g}, u_inf - decreasing <= {over_d:.3g}")
    return MinimalityReport(float(lam), passed, over_v, over_d, dec)
