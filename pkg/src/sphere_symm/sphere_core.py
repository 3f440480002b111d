"""Geometry and normalized measure on S^d.

Points are written in coordinates (theta, t) where t = x_{d+1} is the height
and theta is the direction of the horizontal part on S^{d-1}.  Both the
surface measure on S^d and the measure on S^{d-1} are normalized to total
mass one, so that

    d sigma = w_d(t) dt d mu(theta),   w_d(t) = c_d (1 - t^2)^((d-2)/2).
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc, gammaln

from .errors import DomainError, PreconditionError

UNIT_TOL = 1e-12
HEIGHT_TOL = 1e-12
# relative tolerance for the equality branch of the triangle condition
BOUNDARY_RTOL = 1e-12


def north_pole(d):
    """Return N = (0, ..., 0, 1) in R^{d+1}."""
    n = np.zeros(d + 1)
    n[-1] = 1.0
    return n


def _check_dim(d):
    if int(d) != d or d < 1:
        raise PreconditionError(f"dimension must be an integer >= 1, got {d!r}")
    return int(d)


@dataclass(frozen=True)
class Point:
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float).copy()
        if c.ndim != 1 or c.size < 2:
            raise PreconditionError("a point needs a 1-D coordinate vector of length >= 2")
        if abs(np.linalg.norm(c) - 1.0) > UNIT_TOL:
            raise PreconditionError(f"point is not on the unit sphere (norm={np.linalg.norm(c)!r})")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def normalized(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v / np.linalg.norm(v))

    @property
    def d(self):
        return self.coords.size - 1


@dataclass(frozen=True)
class Hyperplane:
    """Oriented hyperplane through the origin; H+ = {x : x . normal >= 0}."""

    normal: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).copy()
        if n.ndim != 1 or n.size < 2:
            raise PreconditionError("hyperplane normal must be a vector of length >= 2")
        if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
            raise PreconditionError(f"hyperplane normal is not a unit vector (norm={np.linalg.norm(n)!r})")
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v / np.linalg.norm(v))

    @property
    def d(self):
        return self.normal.size - 1

    def flipped(self):
        return Hyperplane(-self.normal)


@dataclass(frozen=True)
class Cap:
    """Closed cap {x : x . center >= height}."""

    center: Point
    height: float

    def __post_init__(self):
        if not isinstance(self.center, Point):
            object.__setattr__(self, "center", Point(self.center))
        if not -1.0 <= self.height <= 1.0:
            raise DomainError(f"cap height must lie in [-1, 1], got {self.height!r}")

    @classmethod
    def at_north(cls, d, height):
        return cls(Point(north_pole(d)), float(height))

    @classmethod
    def with_measure(cls, center, e):
        center = center if isinstance(center, Point) else Point(center)
        return cls(center, cap_height(e, center.d))

    @property
    def d(self):
        return self.center.d

    @property
    def radius(self):
        return math.acos(self.height)

    @property
    def measure(self):
        return cap_measure(self.height, self.d)


def weight_constant(d):
    """c_d such that the height density integrates to one over [-1, 1]."""
    d = _check_dim(d)
    return math.exp(gammaln((d + 1) / 2) - gammaln(d / 2)) / math.sqrt(math.pi)


def weight(t, d):
    """Density of the height coordinate t under normalized surface measure."""
    d = _check_dim(d)
    t = np.asarray(t, dtype=float)
    if d == 1:
        if np.any(np.abs(t) >= 1.0):
            raise DomainError("weight(t, 1) is singular at |t| = 1")
    elif np.any(np.abs(t) > 1.0):
        raise DomainError("height must lie in [-1, 1]")
    c = weight_constant(d)
    if d == 2:
        out = np.full_like(t, c)
    else:
        out = c * (1.0 - t * t) ** ((d - 2) / 2)
    return out if out.ndim else float(out)


def cap_measure(t0, d):
    """Normalized measure of the cap {t >= t0} on S^d (vectorized in t0)."""
    d = _check_dim(d)
    t0 = np.asarray(t0, dtype=float)
    if np.any(np.abs(t0) > 1.0):
        raise DomainError("cap height must lie in [-1, 1]")
    if d == 1:
        out = np.arccos(t0) / math.pi
    elif d == 2:
        out = (1.0 - t0) / 2.0
    else:
        # sigma{t >= t0} = I_{1-t0^2}(d/2, 1/2) / 2 for t0 >= 0
        half = 0.5 * betainc(d / 2.0, 0.5, 1.0 - t0 * t0)
        out = np.where(t0 >= 0, half, 1.0 - half)
    return out if out.ndim else float(out)


def boundary_cap_measure(u, d_boundary):
    """mu{theta in S^k : theta . theta0 >= u}, including the two-point sphere k = 0."""
    u = np.asarray(u, dtype=float)
    if d_boundary == 0:
        out = np.where(u <= -1.0, 1.0, np.where(u <= 1.0, 0.5, 0.0))
    else:
        out = cap_measure(np.clip(u, -1.0, 1.0), d_boundary)
        out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def cap_height(e, d):
    """Height t0 whose cap has measure e.  Closed form for d <= 2, bisection otherwise."""
    d = _check_dim(d)
    if not 0.0 <= e <= 1.0:
        raise DomainError(f"measure must lie in [0, 1], got {e!r}")
    if e == 1.0:
        return -1.0
    if e == 0.0:
        return 1.0
    if d == 1:
        return math.cos(math.pi * e)
    if d == 2:
        return 1.0 - 2.0 * e
    lo, hi = -1.0, 1.0
    while hi - lo > HEIGHT_TOL:
        mid = 0.5 * (lo + hi)
        if cap_measure(mid, d) > e:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def reflect(x, H):
    """Reflection x - 2 (x . n) n across H; accepts a Point or an (..., d+1) array."""
    n = H.normal
    if isinstance(x, Point):
        y = x.coords - 2.0 * np.dot(x.coords, n) * n
        return Point(y / np.linalg.norm(y))
    x = np.asarray(x, dtype=float)
    return x - 2.0 * (x @ n)[..., None] * n


def geodesic_distance(x, y):
    x = x.coords if isinstance(x, Point) else np.asarray(x)
    y = y.coords if isinstance(y, Point) else np.asarray(y)
    return float(np.arccos(np.clip(np.dot(x, y), -1.0, 1.0)))


def plane_rotation(dim, i, j, angle):
    """Rotation of R^dim by `angle` in the (x_i, x_j) coordinate plane, x_i toward x_j."""
    R = np.eye(dim)
    c, s = math.cos(angle), math.sin(angle)
    R[i, i] = c
    R[j, j] = c
    R[j, i] = s
    R[i, j] = -s
    return R


def tilt_rotation(angles):
    """Rotation that tilts the pole: product over i of rotations in the (x_i, x_{d+1}) planes.

    With d = len(angles), a positive angle in plane i moves N toward +e_i.
    """
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    dim = angles.size + 1
    R = np.eye(dim)
    for i, a in enumerate(angles):
        R = plane_rotation(dim, dim - 1, i, a) @ R
    return R


class TripleClass(str, enum.Enum):
    STRICT = "Strict"
    BOUNDARY = "Boundary"
    FAIL = "Fail"


@dataclass(frozen=True)
class AdmissibleTriple:
    e1: float
    e2: float
    a: float
    d: int
    h1: float
    h2: float
    r1: float
    r2: float
    r3: float
    gamma1: float = field(default=float("nan"))
    gamma2: float = field(default=float("nan"))
    klass: TripleClass = TripleClass.FAIL

    @property
    def heights(self):
        return (self.h1, self.h2)

    @property
    def measures(self):
        return (self.e1, self.e2)

    @property
    def gammas(self):
        return (self.gamma1, self.gamma2)

    def height(self, j):
        return (self.h1, self.h2)[j - 1]

    def measure(self, j):
        return (self.e1, self.e2)[j - 1]

    def slope(self, j):
        return (self.gamma1, self.gamma2)[j - 1]

    def to_dict(self):
        return {
            "e1": self.e1, "e2": self.e2, "a": self.a, "d": self.d,
            "h": [self.h1, self.h2],
            "r": [self.r1, self.r2, self.r3],
            "gamma": [self.gamma1, self.gamma2],
            "class": self.klass.value,
        }


def triangle_class(r1, r2, r3):
    """Classify radii by the spherical triangle conditions.

    r_i + r_j > r_k for every permutation, plus r1 + r2 + r3 < 2 pi: past
    that perimeter the complements of the two caps and the interval cap are
    disjoint, the kernel is flat at h_j and the slopes vanish.
    """
    worst = min(r1 + r2 - r3, r1 + r3 - r2, r2 + r3 - r1, 2.0 * math.pi - (r1 + r2 + r3))
    scale = max(r1, r2, r3, 1.0)
    if worst > BOUNDARY_RTOL * scale:
        return TripleClass.STRICT
    if worst >= -BOUNDARY_RTOL * scale:
        return TripleClass.BOUNDARY
    return TripleClass.FAIL


def classify_triple(e1, e2, a, d, *, with_slopes=True):
    """Derive heights, radii and kernel slopes of (e1, e2, [a, 1]) and classify it."""
    d = _check_dim(d)
    for name, e in (("e1", e1), ("e2", e2)):
        if not 0.0 < e < 1.0:
            raise PreconditionError(f"{name} must lie in (0, 1), got {e!r}")
    if not -1.0 < a < 1.0:
        raise PreconditionError(f"a must lie in (-1, 1), got {a!r}")
    h1, h2 = cap_height(e1, d), cap_height(e2, d)
    r1, r2, r3 = math.acos(h1), math.acos(h2), math.acos(a)
    triple = AdmissibleTriple(
        e1=float(e1), e2=float(e2), a=float(a), d=d,
        h1=h1, h2=h2, r1=r1, r2=r2, r3=r3,
        klass=triangle_class(r1, r2, r3),
    )
    if not with_slopes:
        return triple
    from .functional import gamma

    g1 = gamma(triple, 1)
    g2 = g1 if e1 == e2 else gamma(triple, 2)
    return dataclasses.replace(triple, gamma1=g1, gamma2=g2)
