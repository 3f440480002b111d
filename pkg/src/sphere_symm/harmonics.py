"""Boundary functions on S^{d-1}, the boundary bilinear form Q and its spectrum.

For a set E near the north cap B = {t >= h}, the associated function
F(theta) integrates (1_E - 1_B) w dt along the meridian through theta.  On
S^1 boundaries (d = 2) functions are sampled at the grid azimuths; on the
two-point boundary (d = 1) they are a pair of values at theta = -1, +1.

The bilinear form Q(F, G) = int int F G 1{theta1 . theta2 >= u*} dmu dmu is
diagonal in spherical harmonics; its eigenvalues have closed forms here, and
Q_form evaluates the double integral independently by quadrature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, PreconditionError
from .set_model import north_cap
from .sphere_core import TripleClass, tilt_rotation, weight

# the spectral inequality at a saturated degree must count as a failure
SATURATION_RTOL = 1e-9


@dataclass(frozen=True)
class BoundaryFunction:
    """Samples of a function on S^{d-1} at equally weighted nodes."""

    d: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        if self.d == 1 and v.size != 2:
            raise PreconditionError("a function on S^0 has exactly two values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def nodes(self):
        """theta values (d = 1) or azimuths (d = 2)."""
        M = self.values.size
        if self.d == 1:
            return np.array([-1.0, 1.0])
        return (np.arange(M) + 0.5) * (2.0 * math.pi / M)

    def inner(self, other):
        return float(np.mean(self.values * other.values))

    def norm(self):
        return math.sqrt(self.inner(self))

    def mean(self):
        return float(np.mean(self.values))

    def __add__(self, other):
        return BoundaryFunction(self.d, self.values + other.values)

    def __sub__(self, other):
        return BoundaryFunction(self.d, self.values - other.values)

    def scaled(self, c):
        return BoundaryFunction(self.d, c * self.values)

    @classmethod
    def harmonic(cls, d, n_nodes, degree, phase=0.0, amplitude=1.0):
        """Unit-norm degree-n harmonic: sqrt(2) cos(n (phi - phase)) on S^1, theta on S^0."""
        if d == 1:
            if degree == 0:
                return cls(1, np.full(2, float(amplitude)))
            if degree == 1:
                return cls(1, amplitude * np.array([-1.0, 1.0]))
            raise PreconditionError("S^0 carries harmonics of degree 0 and 1 only")
        phi = (np.arange(n_nodes) + 0.5) * (2.0 * math.pi / n_nodes)
        if degree == 0:
            return cls(2, np.full(n_nodes, float(amplitude)))
        return cls(2, amplitude * math.sqrt(2.0) * np.cos(degree * (phi - phase)))


def associated_function(E, triple, j):
    """(F, F+, F-) for E against the rasterized north cap of height h_j."""
    g = E.grid
    if g.d != triple.d:
        raise PreconditionError("set and triple live on different spheres")
    B = north_cap(g, triple.height(j))
    scale = g.cell_measure / g.column_mass
    col = g.column_index

    def column_sum(mask):
        return np.bincount(col[mask], minlength=g.n_columns) * scale

    plus = column_sum(E.occupancy & ~B.occupancy)
    minus = column_sum(B.occupancy & ~E.occupancy)
    return (BoundaryFunction(g.d, plus - minus), BoundaryFunction(g.d, plus), BoundaryFunction(g.d, minus))


def project(F, n):
    """Orthogonal projection onto degree-n harmonics (exact on the sample nodes)."""
    v = F.values
    if F.d == 1:
        if n == 0:
            return BoundaryFunction(1, np.full(2, v.mean()))
        if n == 1:
            odd = 0.5 * (v[1] - v[0])
            return BoundaryFunction(1, np.array([-odd, odd]))
        return BoundaryFunction(1, np.zeros(2))
    M = v.size
    if n < 0 or n > M // 2:
        raise PreconditionError(f"degree {n} is not resolved by {M} nodes")
    if n == 0:
        return BoundaryFunction(2, np.full(M, v.mean()))
    phi = F.nodes
    out = np.zeros(M)
    for basis in (np.cos(n * phi), np.sin(n * phi)):
        nb = basis @ basis
        if nb > 1e-9 * M:  # at the Nyquist degree one of the two vanishes on the nodes
            out += (v @ basis) / nb * basis
    return BoundaryFunction(2, out)


def u_star(triple):
    s1 = math.sqrt(1.0 - triple.h1 ** 2)
    s2 = math.sqrt(1.0 - triple.h2 ** 2)
    return (triple.a - triple.h1 * triple.h2) / (s1 * s2)


def _half_angle(u):
    """Half-width of {psi : cos psi >= u}; 0 when u >= 1, pi when u <= -1."""
    return math.acos(min(1.0, max(-1.0, u)))


def eigenvalue(n, triple):
    """Eigenvalue of the kernel 1{theta1 . theta2 >= u*} on degree-n harmonics."""
    if n < 0:
        raise PreconditionError(f"degree must be >= 0, got {n}")
    u = u_star(triple)
    if triple.d == 1:
        if u >= 1.0:
            return 0.0
        if u <= -1.0:
            return 1.0 if n == 0 else 0.0
        return 0.5 if n in (0, 1) else 0.0
    if triple.d != 2:
        raise PreconditionError("closed-form eigenvalues are provided for d in {1, 2}")
    if u >= 1.0:
        return 0.0
    if u <= -1.0:
        return 1.0 if n == 0 else 0.0
    phi = _half_angle(u)
    if n == 0:
        return phi / math.pi
    return math.sin(n * phi) / (n * math.pi)


def _trig_coefficients(v):
    """Real trigonometric coefficients of samples at phi_m = 2 pi (m + 1/2) / M."""
    M = v.size
    phi = (np.arange(M) + 0.5) * (2.0 * math.pi / M)
    n = np.arange(M // 2 + 1)
    C = np.cos(np.outer(n, phi))
    S = np.sin(np.outer(n, phi))
    a = (C @ v) * (2.0 / M)
    b = (S @ v) * (2.0 / M)
    a[0] *= 0.5
    if M % 2 == 0:
        a[-1] *= 0.5
        b[-1] *= 0.5
    return n, a, b


def Q_form(F, G, triple, n_gauss=None):
    """Q(F, G) by quadrature: Gauss-Legendre across the kernel window, trapezoid around the circle.

    G is extended off the nodes by its trigonometric interpolant, so the
    result is exact up to rounding for band-limited samples.  This path does
    not use the closed-form eigenvalues.
    """
    if F.d != G.d or F.values.size != G.values.size:
        raise PreconditionError("Q_form needs two functions on the same nodes")
    u = u_star(triple)
    if F.d == 1:
        if u >= 1.0:
            return 0.0
        K = np.ones((2, 2)) if u <= -1.0 else np.eye(2)
        return float(F.values @ K @ G.values) / 4.0
    half = _half_angle(u)
    if half == 0.0:
        return 0.0
    M = G.values.size
    n, a, b = _trig_coefficients(G.values)
    ng = n_gauss or max(64, M)
    x, w = np.polynomial.legendre.leggauss(ng)
    psi = half * x
    wq = half * w / (2.0 * math.pi)
    phi1 = F.nodes
    # inner(phi1) = (1 / 2 pi) int_{-half}^{half} G(phi1 + psi) dpsi
    inner = np.zeros(M)
    arg = phi1[:, None] + psi[None, :]
    for k in range(n.size):
        if a[k] == 0.0 and b[k] == 0.0:
            continue
        vals = a[k] * np.cos(n[k] * arg) + b[k] * np.sin(n[k] * arg)
        inner += vals @ wq
    return float(np.mean(F.values * inner))


def spectral_bound(triple):
    g1, g2 = triple.gammas
    w1 = weight(triple.h1, triple.d)
    w2 = weight(triple.h2, triple.d)
    return math.sqrt(g1 * g2 / (w1 * w2))


@dataclass
class SpectralReport:
    triple: object
    u_star: float
    clamped: bool
    bound: float
    eigenvalues: list
    verdicts: list
    saturation_n1: float

    @property
    def passed(self):
        return all(self.verdicts)

    def to_dict(self):
        return {
            "schema": "sphere-symm/1",
            "kind": "spectrum",
            "triple": self.triple.to_dict(),
            "u_star": self.u_star,
            "clamped": self.clamped,
            "bound": self.bound,
            "lambda": list(self.eigenvalues),
            "verdicts": [bool(v) for v in self.verdicts],
            "saturation_n1": self.saturation_n1,
            "pass": self.passed,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def spectral_check(triple, n_max=32):
    """Compare |lambda_n| with sqrt(gamma1 gamma2 / (w(h1) w(h2))) for n >= 1."""
    if triple.klass != TripleClass.STRICT:
        raise PreconditionError(f"spectral check needs a strict triple, got {triple.klass.value}")
    if triple.d not in (1, 2):
        raise PreconditionError("spectral check is provided for d in {1, 2}")
    u = u_star(triple)
    bound = spectral_bound(triple)
    n_top = 1 if triple.d == 1 else int(n_max)
    lams = [eigenvalue(n, triple) for n in range(n_top + 1)]
    verdicts = [abs(lam) < bound * (1.0 - SATURATION_RTOL) for lam in lams[1:]]
    sat = abs(lams[1]) / bound if bound > 0 else math.inf
    return SpectralReport(triple, u, not -1.0 < u < 1.0, bound, lams, verdicts, sat)


# ---------------------------------------------------------------------------
# balancing


@dataclass
class BalanceResult:
    angles: np.ndarray
    rotation: np.ndarray
    first_moment: float  # ||pi_1 F|| after balancing
    f_norm: float
    iterations: int
    history: list = field(default_factory=list)

    def apply(self, E):
        return E.transported(self.rotation)


def _smoothed_moments(X, h, cell):
    """sum over rows x of x_i / rho(t), with rho bounded away from 0 near the poles."""
    T = 0.5 * (1.0 + abs(h))
    t = X[:, -1]
    rho = np.sqrt(1.0 - np.minimum(t * t, T * T))
    return (X[:, :-1] / rho[:, None]).sum(axis=0) * cell


def balance(E, triple, j=1, tol=1e-6, max_iter=50, fd_step=1e-6):
    """Rotation Q near the identity making the associated function of Q E orthogonal to degree 1.

    Q is parametrized by tilt angles.  The degree-1 moments of the associated
    function are sums over cells of x_i / sqrt(1 - t^2); the cells sit near
    the cap boundary, so the weight is capped near the poles without changing
    the moments of sets that agree with the cap there.
    """
    g = E.grid
    d = g.d
    h = triple.height(j)
    F, _, _ = associated_function(E, triple, j)
    f_norm = F.norm()
    X = g.nodes[E.occupancy]
    B = north_cap(g, h)
    base = _smoothed_moments(g.nodes[B.occupancy], h, g.cell_measure)

    def moments(angles):
        R = tilt_rotation(angles)
        return _smoothed_moments(X @ R.T, h, g.cell_measure) - base

    def pi1_norm(m):
        return math.sqrt(d * float(m @ m))

    x = np.zeros(d)
    m = moments(x)
    history = [pi1_norm(m)]
    if f_norm == 0.0 or history[0] <= tol * f_norm:
        return BalanceResult(x, tilt_rotation(x), history[0], f_norm, 0, history)
    for it in range(1, max_iter + 1):
        J = np.empty((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = fd_step
            J[:, k] = (moments(x + e) - moments(x - e)) / (2.0 * fd_step)
        try:
            dx = np.linalg.solve(J, -m)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular balancing Jacobian", residual=history[-1]) from exc
        x = x + dx
        m = moments(x)
        history.append(pi1_norm(m))
        if history[-1] <= tol * f_norm:
            return BalanceResult(x, tilt_rotation(x), history[-1], f_norm, it, history)
    raise ConvergenceError(f"balancing did not reach {tol:g} relative first moment", residual=history[-1])
