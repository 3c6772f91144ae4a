"""Domains, boundary distance, graded meshes, the exterior mass and the radial kernel.

Only two geometries are meshed: intervals and balls.  For balls all fields
are radial, so a mesh stores radii and every nonlocal interaction is reduced
to the radial line through angular integration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gamma as Gamma

from .errors import ConfigurationError, DivergenceError, DomainError, SingularityError

__all__ = [
    "FractionalOrder",
    "Interval",
    "Ball",
    "GradedMesh",
    "as_alpha",
    "rho",
    "build_mesh",
    "phi",
    "phi_nodes",
    "radial_kernel",
    "sphere_area",
    "singular_coefficient",
]

ANGULAR_ORDER = 64


@dataclass(frozen=True)
class FractionalOrder:
    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not (0.0 < a < 1.0) or not math.isfinite(a):
            raise DomainError(f"fractional order must lie in (0, 1), got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)

    def requires_half_plus(self) -> bool:
        """True in the regime alpha > 1/2 where the regional Green function decays."""
        return self.alpha > 0.5

    def __float__(self):
        return self.alpha


def as_alpha(alpha) -> float:
    if isinstance(alpha, FractionalOrder):
        return alpha.alpha
    return FractionalOrder(alpha).alpha


@dataclass(frozen=True)
class Interval:
    a: float = -1.0
    b: float = 1.0

    def __post_init__(self):
        if not float(self.a) < float(self.b):
            raise DomainError(f"interval needs a < b, got ({self.a}, {self.b})")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))

    kind = "interval"
    dim = 1

    @property
    def diameter(self) -> float:
        return self.b - self.a

    @property
    def inradius(self) -> float:
        return 0.5 * (self.b - self.a)

    @property
    def center(self) -> float:
        return 0.5 * (self.a + self.b)

    def rho(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x < self.a) | (x > self.b)) or np.any(~np.isfinite(x)):
            raise DomainError("point outside the closed interval")
        return np.minimum(x - self.a, self.b - x)

    def to_dict(self):
        return {"kind": "interval", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Ball:
    radius: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if not float(self.radius) > 0:
            raise DomainError("ball radius must be positive")
        if int(self.dim) != self.dim or int(self.dim) < 1:
            raise DomainError("ball dimension must be a positive integer")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "dim", int(self.dim))

    kind = "ball"

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def inradius(self) -> float:
        return self.radius

    @property
    def center(self) -> float:
        return 0.0

    def rho(self, x):
        """Boundary distance.  A scalar (or 0-d array) is read as the radial coordinate |x|."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            r = np.abs(x)
        else:
            if x.shape[-1] != self.dim:
                raise DomainError(f"expected points with {self.dim} coordinates")
            r = np.linalg.norm(x, axis=-1)
        if np.any(r > self.radius) or np.any(~np.isfinite(r)):
            raise DomainError("point outside the closed ball")
        return self.radius - r

    def to_dict(self):
        return {"kind": "ball", "radius": self.radius, "dim": self.dim}


def rho(domain, x):
    """Distance from ``x`` to the complement of ``domain``."""
    return domain.rho(x)


@dataclass(frozen=True, eq=False)
class GradedMesh:
    """Boundary-graded collocation nodes.

    ``nodes`` are coordinates (interval) or radii (ball); ``rho`` holds the
    boundary distance of each node computed directly from the grading map, so
    that it keeps full relative precision next to the boundary.  ``side`` is
    -1/+1 for nodes attached to the left/right endpoint of an interval and 0 for
    the midpoint (always 0 for balls).
    """

    domain: object
    M: int
    gamma: float
    nodes: np.ndarray
    rho: np.ndarray
    side: np.ndarray
    boundary_nodes: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def h_min(self) -> float:
        return float(self.rho.min())

    def points(self) -> np.ndarray:
        """Nodes with the boundary points appended (interval: both ends; ball: 0 and R)."""
        if self.domain.kind == "interval":
            return np.concatenate(([self.domain.a], self.nodes, [self.domain.b]))
        return np.concatenate(([0.0], self.nodes, [self.domain.radius]))

    def point_rho(self) -> np.ndarray:
        """Boundary distance of :meth:`points`; the ball centre gets distance R."""
        if self.domain.kind == "interval":
            return np.concatenate(([0.0], self.rho, [0.0]))
        return np.concatenate(([self.domain.radius], self.rho, [0.0]))

    def point_side(self) -> np.ndarray:
        if self.domain.kind == "interval":
            return np.concatenate(([-1], self.side, [1]))
        return np.zeros(self.M + 2, dtype=int)

    def distances(self, i: int) -> np.ndarray:
        """|x_i - X_k| for all points X_k, accurate to full relative precision near the boundary."""
        prho = self.point_rho()
        r_i = self.rho[i]
        if self.domain.kind == "ball":
            d = np.abs(prho - r_i)
        else:
            pside = self.point_side()
            s_i = self.side[i]
            same = (pside == s_i) | (pside == 0) | (s_i == 0)
            d = np.where(same, np.abs(prho - r_i), self.domain.diameter - prho - r_i)
        return d

    def cell_widths(self) -> np.ndarray:
        """Widths of the M+1 cells between consecutive points."""
        if "widths" not in self._cache:
            prho = self.point_rho()
            pside = self.point_side()
            pts = self.points()
            w = np.empty(self.M + 1)
            for k in range(self.M + 1):
                if self.domain.kind == "ball" or pside[k] == pside[k + 1] or 0 in (pside[k], pside[k + 1]):
                    w[k] = abs(prho[k + 1] - prho[k])
                else:
                    w[k] = pts[k + 1] - pts[k]
            self._cache["widths"] = w
        return self._cache["widths"]

    def trapezoid_weights(self) -> np.ndarray:
        """Half the sum of the two cells adjacent to each node."""
        w = self.cell_widths()
        return 0.5 * (w[:-1] + w[1:])

    def window(self, t: float) -> np.ndarray:
        """Indices of the inner region {rho > t}, a contiguous block."""
        idx = np.flatnonzero(self.rho > t)
        if idx.size and idx[-1] - idx[0] + 1 != idx.size:
            raise AssertionError("inner region is not contiguous")
        return idx

    def center_index(self) -> int:
        """Node closest to the domain centre."""
        return int(np.argmax(self.rho))

    def layer(self, lo: float, hi: float) -> np.ndarray:
        """Indices with lo < rho <= hi."""
        return np.flatnonzero((self.rho > lo) & (self.rho <= hi))


def build_mesh(domain, M: int, gamma: float = 3.0) -> GradedMesh:
    """Graded interior nodes clustered algebraically toward the boundary.

    Node j (1..M) sits at boundary distance L * (2 k / (M+1))**gamma with
    k = min(j, M+1-j) and L the half-length for intervals; for balls the radii
    are R * (1 - (1 - j/(M+1))**gamma).
    """
    if int(M) != M or M < 8:
        raise ConfigurationError(f"mesh needs at least 8 interior nodes, got M={M}")
    if not (gamma >= 1.0) or not math.isfinite(gamma):
        raise ConfigurationError(f"grading exponent must be >= 1, got {gamma}")
    M = int(M)
    gamma = float(gamma)
    j = np.arange(1, M + 1)
    if domain.kind == "interval":
        half = domain.inradius
        k = np.minimum(j, M + 1 - j)
        r = half * (2.0 * k / (M + 1)) ** gamma
        # the (2k/(M+1)) == 1 node must be the exact midpoint
        r = np.where(2 * k == M + 1, half, r)
        side = np.where(2 * j < M + 1, -1, np.where(2 * j > M + 1, 1, 0))
        nodes = np.where(side < 0, domain.a + r, np.where(side > 0, domain.b - r, domain.center))
        bnodes = np.array([domain.a, domain.b])
    elif domain.kind == "ball":
        R = domain.radius
        r = R * (1.0 - j / (M + 1)) ** gamma
        nodes = R - r
        side = np.zeros(M, dtype=int)
        bnodes = np.array([R])
    else:
        raise ConfigurationError(f"unknown domain kind {domain.kind!r}")
    if np.any(np.diff(nodes) <= 0) or np.any(r <= 0):
        raise ConfigurationError("grading produced coincident nodes; lower gamma or M")
    for arr in (nodes, r, side):
        arr.setflags(write=False)
    return GradedMesh(domain, M, gamma, nodes, r, side, bnodes)


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere S^{n-1} in R^n (n >= 1; S^0 has measure 2)."""
    return 2.0 * math.pi ** (n / 2) / Gamma(n / 2)


def singular_coefficient(N: int, alpha: float) -> float:
    """c with K_N(r, s) ~ c |r - s|^{-1-2 alpha} as s -> r."""
    return math.pi ** ((N - 1) / 2) * Gamma((1 + 2 * alpha) / 2) / Gamma((N + 2 * alpha) / 2)


def phi(domain, alpha, x):
    """Exterior mass: integral of |x-y|^{-(N+2 alpha)} over the complement of the domain."""
    alpha = as_alpha(alpha)
    d = np.asarray(domain.rho(x), dtype=float)
    if np.any(d <= 0):
        raise DivergenceError("exterior mass is infinite on the boundary")
    if domain.kind == "interval":
        x = np.asarray(x, dtype=float)
        return ((x - domain.a) ** (-2 * alpha) + (domain.b - x) ** (-2 * alpha)) / (2 * alpha)
    return _phi_ball(domain.radius, domain.dim, alpha, d)


def phi_nodes(mesh: GradedMesh, alpha) -> np.ndarray:
    """Exterior mass at the mesh nodes, using the precise boundary distances."""
    alpha = as_alpha(alpha)
    dom = mesh.domain
    if dom.kind == "interval":
        far = dom.diameter - mesh.rho
        return (mesh.rho ** (-2 * alpha) + far ** (-2 * alpha)) / (2 * alpha)
    return _phi_ball(dom.radius, dom.dim, alpha, mesh.rho)


def _phi_ball(R, N, alpha, d):
    if np.ndim(d) == 0:
        return _phi_ball_scalar(R, N, alpha, float(d))
    d = np.asarray(d, dtype=float)
    out = np.empty(d.shape)
    for idx, dist in np.ndenumerate(d):
        out[idx] = _phi_ball_scalar(R, N, alpha, float(dist))
    return out


@lru_cache(maxsize=4096)
def _phi_ball_scalar(R, N, alpha, d):
    # Rays from x: the exterior starts at distance ell(theta) along direction theta from
    # the outward radial direction, and the radial integral of t^{-1-2a} is closed form.
    r = R - d
    if N == 1:
        return (d ** (-2 * alpha) + (R + r) ** (-2 * alpha)) / (2 * alpha)

    def ell(theta):
        c = math.cos(theta)
        disc = r * r * c * c + (R - r) * (R + r)
        return (R * R - r * r) / (r * c + math.sqrt(disc))

    def integrand(theta):
        return ell(theta) ** (-2 * alpha) * math.sin(theta) ** (N - 2)

    width = max(d / max(r, 1e-300), 1e-12)
    pts = [p for p in (width, 10 * width, 100 * width) if p < math.pi]
    val, err = integrate.quad(integrand, 0.0, math.pi, points=pts or None, limit=400,
                              epsabs=0.0, epsrel=1e-12)
    return sphere_area(N - 1) * val / (2 * alpha)


def _gl(n):
    key = ("gl", n)
    if key not in _GL_CACHE:
        _GL_CACHE[key] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[key]


_GL_CACHE: dict = {}


def radial_kernel(N: int, alpha, r, s, order: int = ANGULAR_ORDER):
    """Angular integral s^{N-1} * int_{S^{N-1}} |r e_1 - s w|^{-(N+2 alpha)} dw.

    For N = 1 this is |r-s|^{-1-2a} + |r+s|^{-1-2a}.  For N >= 2 the polar angle
    is integrated with Gauss-Legendre panels of the given order on dyadic
    intervals that shrink toward theta = 0 until they resolve the peak of
    width |r - s| / sqrt(r s).
    """
    alpha = as_alpha(alpha)
    r, s = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(s, dtype=float))
    if np.any(r == s):
        raise SingularityError("radial kernel is singular for r == s")
    if np.any(r < 0) or np.any(s < 0):
        raise DomainError("radii must be nonnegative")
    e = N + 2 * alpha
    if N == 1:
        return np.abs(r - s) ** (-1 - 2 * alpha) + (r + s) ** (-1 - 2 * alpha)

    shape = r.shape
    r = r.ravel()
    s = s.ravel()
    out = np.empty(r.shape)
    rs = r * s
    with np.errstate(divide="ignore"):
        peak = np.where(rs > 0, np.abs(r - s) / np.sqrt(np.where(rs > 0, rs, 1.0)), np.inf)
    levels = np.where(np.isfinite(peak), np.ceil(np.log2(np.pi / np.minimum(peak, np.pi))) + 2, 0)
    levels = np.clip(levels, 1, 60).astype(int)
    x, w = _gl(order)
    for L in np.unique(levels):
        sel = levels == L
        edges = np.pi * 2.0 ** -np.arange(L, -1, -1.0)
        edges = np.concatenate(([0.0], edges))
        a, b = edges[:-1], edges[1:]
        th = (0.5 * (b - a)[:, None] * (x[None, :] + 1) + a[:, None]).ravel()
        wt = (0.5 * (b - a)[:, None] * w[None, :]).ravel()
        rr = r[sel][:, None]
        ss = s[sel][:, None]
        half = np.sin(0.5 * th)[None, :]
        dist2 = (rr - ss) ** 2 + 4 * rr * ss * half * half
        vals = dist2 ** (-0.5 * e) * np.sin(th)[None, :] ** (N - 2)
        out[sel] = sphere_area(N - 1) * (vals @ wt) * s[sel] ** (N - 1)
    return out.reshape(shape)
