"""Two-point symmetrization E -> E_H on grids, flows toward caps, band landing.

Reflections do not map a grid onto itself, so each hyperplane gets a pairing
table.  Every cell at least half a cell away from H proposes, among the cells
around rho_H(node) on the other side, the nearest one still free; mutual
proposals are accepted and the rounds repeat until nothing changes.  Cells
left over stay fixed.  Swapping occupancy along pairs keeps the cell count
exactly.
"""

from __future__ import annotations

import csv
import io
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConvergenceError, PreconditionError
from .functional import evaluate_T
from .orbit_distance import dist_to_orbit
from .rng import generator
from .set_model import SphericalSet, rearrange, symm_diff_measure
from .sphere_core import Hyperplane, north_pole

NORMAL_QUANTUM = 1e-6
SWEEP_PERIOD = 25
_CACHE_SIZE = 64


@dataclass(frozen=True)
class PairingTable:
    grid: object
    hyperplane: Hyperplane
    plus: np.ndarray   # paired cells on the positive side
    minus: np.ndarray  # their partners, same order
    fixed: np.ndarray

    @property
    def pairs(self):
        return np.stack([self.plus, self.minus], axis=1)

    @property
    def fixed_fraction(self):
        return self.fixed.size / self.grid.n_cells


def _quantize(normal):
    q = np.round(np.asarray(normal) / NORMAL_QUANTUM).astype(np.int64)
    return tuple(int(v) for v in q)


MATCH_ROUNDS = 40
MATCH_RADII = (1, 2, 3, 4, 6)


def _neighbourhood(g, y, r):
    """Cells within r index steps (ring and azimuth) of the cells containing the points y."""
    c = g.locate(y)
    if g.d == 1:
        return np.stack([(c + k) % g.n_phi for k in range(-r, r + 1)], axis=1)
    k, m = np.divmod(c, g.n_phi)
    out = []
    for dk in range(-r, r + 1):
        kk = k + dk
        for dm in range(-r, r + 1):
            idx = np.clip(kk, 0, g.n_t - 1) * g.n_phi + (m + dm) % g.n_phi
            out.append(np.where((kk >= 0) & (kk < g.n_t), idx, -1))
    return np.stack(out, axis=1)


def _ranked_candidates(g, src, allowed, n, r):
    """Candidate partners for each cell in src, nearest to its reflection first (-1 pads)."""
    X = g.nodes
    y = X[src] - 2.0 * (X[src] @ n)[:, None] * n
    cand = _neighbourhood(g, y, r)
    ok = cand >= 0
    ok[ok] = allowed[cand[ok]]
    dist = np.where(ok, np.linalg.norm(X[np.maximum(cand, 0)] - y[:, None, :], axis=-1), np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    return np.take_along_axis(np.where(ok, cand, -1), order, axis=1)


def _first_free(cand, free):
    """First still-free candidate per row, -1 if none."""
    avail = (cand >= 0) & free[np.maximum(cand, 0)]
    pos = np.argmax(avail, axis=1)
    pick = cand[np.arange(cand.shape[0]), pos]
    return np.where(avail.any(axis=1), pick, -1)


def _match_leftovers(g, n, pos, neg, free, partner):
    """Mutual nearest neighbours among the cells still free, within two cell diameters."""
    X = g.nodes
    limit = 2.0 * g.cell_diameter
    for _ in range(MATCH_ROUNDS):
        P = np.flatnonzero(free & pos)
        M = np.flatnonzero(free & neg)
        if P.size == 0 or M.size == 0:
            return
        yP = X[P] - 2.0 * (X[P] @ n)[:, None] * n
        dP, jP = cKDTree(X[M]).query(yP)
        yM = X[M] - 2.0 * (X[M] @ n)[:, None] * n
        _, iM = cKDTree(X[P]).query(yM)
        mutual = (iM[jP] == np.arange(P.size)) & (dP <= limit)
        if not mutual.any():
            return
        i, j = P[mutual], M[jP[mutual]]
        partner[i] = j
        free[i] = False
        free[j] = False


def _build_pairing(g, H):
    X = g.nodes
    n = H.normal
    side = X @ n
    far = np.arcsin(np.minimum(np.abs(side), 1.0)) >= g.half_cell * (1.0 - 1e-9)
    pos = far & (side > 0)
    neg = far & (side < 0)
    free = pos | neg
    partner = np.full(g.n_cells, -1, dtype=np.intp)
    # mutual proposals in rounds; cells stuck once their window is used up retry with a wider one
    for r in MATCH_RADII:
        P = np.flatnonzero(free & pos)
        M = np.flatnonzero(free & neg)
        if P.size == 0 or M.size == 0:
            break
        cP = _ranked_candidates(g, P, free & neg, n, r)
        cM = _ranked_candidates(g, M, free & pos, n, r)
        for _ in range(MATCH_ROUNDS):
            up, dn = free[P], free[M]
            if not up.any() or not dn.any():
                break
            choice = np.full(g.n_cells, -1, dtype=np.intp)
            choice[P[up]] = _first_free(cP[up], free)
            choice[M[dn]] = _first_free(cM[dn], free)
            i = P[up]
            j = choice[i]
            mutual = (j >= 0) & (choice[np.maximum(j, 0)] == i)
            if not mutual.any():
                break
            i, j = i[mutual], j[mutual]
            partner[i] = j
            free[i] = False
            free[j] = False
    _match_leftovers(g, n, pos, neg, free, partner)
    plus = np.flatnonzero(partner >= 0)
    minus = partner[plus]
    paired = np.zeros(g.n_cells, bool)
    paired[plus] = True
    paired[minus] = True
    return PairingTable(g, H, plus, minus, np.flatnonzero(~paired))


_cache: OrderedDict = OrderedDict()


def build_pairing(g, H):
    """Pairing table for (grid, H), cached by the normal quantized to 1e-6."""
    if g.d != H.d:
        raise PreconditionError(f"hyperplane in R^{H.d + 1} does not match S^{g.d}")
    key = (g, _quantize(H.normal))
    table = _cache.get(key)
    if table is None:
        Hq = Hyperplane.from_vector(np.asarray(key[1], dtype=float))
        table = _build_pairing(g, Hq)
        _cache[key] = table
        if len(_cache) > _CACHE_SIZE:
            _cache.popitem(last=False)
    else:
        _cache.move_to_end(key)
    return table


def polarize(E, H, table=None):
    """E_H: unions on the positive side, intersections on the negative side, per pair."""
    table = table or build_pairing(E.grid, H)
    occ = E.occupancy.copy()
    p = occ[table.plus]
    m = occ[table.minus]
    occ[table.plus] = p | m
    occ[table.minus] = p & m
    return SphericalSet(E.grid, occ)


def dist_to_north(E):
    return symm_diff_measure(E, rearrange(E))


@dataclass
class FlowStep:
    step: int
    normal: np.ndarray
    T_value: float
    dist1: float
    dist2: float


@dataclass
class FlowTrajectory:
    steps: list = field(default_factory=list)
    terminal: tuple = ()
    converged: bool = False

    def to_csv(self, fh=None):
        own = fh is None
        fh = fh or io.StringIO()
        dim = self.steps[0].normal.size if self.steps else 0
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *[f"normal_{i}" for i in range(dim)], "T_value", "dist1", "dist2"])
        for s in self.steps:
            w.writerow([s.step, *[repr(float(v)) for v in s.normal], repr(s.T_value), repr(s.dist1), repr(s.dist2)])
        return fh.getvalue() if own else None


def _upper_hemisphere_normal(rng, d):
    v = rng.standard_normal(d + 1)
    v /= np.linalg.norm(v)
    if v[-1] < 0:
        v = -v
    return v


def _fibonacci_normal(k, d):
    """Deterministic low-discrepancy normals on the closed upper half of S^d (d in {1, 2})."""
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    if d == 1:
        ang = math.pi * ((k * golden) % 1.0) - math.pi / 2
        return np.array([math.sin(ang), math.cos(ang)])
    z = (k * golden) % 1.0
    phi = 2.0 * math.pi * ((k * golden * golden) % 1.0)
    r = math.sqrt(1.0 - z * z)
    return np.array([r * math.cos(phi), r * math.sin(phi), z])


def recentering_normal(E1, E2):
    """Normal of the plane reflecting the pair's centroid direction onto N, or None."""
    g = E1.grid
    c = g.nodes[E1.occupancy].sum(axis=0) + g.nodes[E2.occupancy].sum(axis=0)
    norm = np.linalg.norm(c)
    if norm == 0.0:
        return None
    c = c / norm
    v = north_pole(g.d) - c
    if np.linalg.norm(v) < 1e-9:
        return None
    return v / np.linalg.norm(v)


def converge_to_caps(E1, E2, schedule="random", seed=0, max_steps=500, target=0.05,
                     a=None, record_T=False):
    """Polarize both sets with a common hyperplane sequence until both are near north caps.

    Hyperplanes always keep N on the positive side.  Every SWEEP_PERIOD steps
    the random (or Fibonacci) normal is replaced by the recentering plane.
    Non-convergence is reported through ``converged`` rather than raised.
    """
    if E1.grid != E2.grid:
        raise PreconditionError("flow needs both sets on one grid")
    if record_T and a is None:
        raise PreconditionError("recording T along the flow needs the interval parameter a")
    if schedule not in ("random", "deterministic"):
        raise PreconditionError(f"unknown schedule {schedule!r}")
    d = E1.d
    rng = generator(seed)
    traj = FlowTrajectory()

    def record(k, normal, A, B):
        T = evaluate_T(A, B, a) if record_T else float("nan")
        step = FlowStep(k, np.asarray(normal, dtype=float), T, dist_to_north(A), dist_to_north(B))
        traj.steps.append(step)
        return max(step.dist1, step.dist2)

    worst = record(0, np.zeros(d + 1), E1, E2)
    k = 0
    while worst > target and k < max_steps:
        k += 1
        normal = None
        if k % SWEEP_PERIOD == 0:
            normal = recentering_normal(E1, E2)
        if normal is None:
            normal = _upper_hemisphere_normal(rng, d) if schedule == "random" else _fibonacci_normal(k, d)
        H = Hyperplane.from_vector(normal)
        table = build_pairing(E1.grid, H)
        E1 = polarize(E1, H, table)
        E2 = polarize(E2, H, table)
        worst = record(k, H.normal, E1, E2)
    traj.terminal = (E1, E2)
    traj.converged = worst <= target
    return traj


def rotation_path(H0, end_normal=None, angle=math.pi):
    """Great-circle path of normals from H0.normal toward end_normal (default: a fixed orthogonal direction)."""
    n0 = H0.normal
    if end_normal is None:
        basis = np.eye(n0.size)
        v = basis[np.argmin(np.abs(n0))]
    else:
        v = np.asarray(end_normal, dtype=float)
    v = v - np.dot(v, n0) * n0
    if np.linalg.norm(v) < 1e-12:
        raise PreconditionError("path end is parallel to the start normal")
    v = v / np.linalg.norm(v)
    if end_normal is not None:
        angle = math.atan2(np.dot(np.asarray(end_normal, dtype=float), v), np.dot(end_normal, n0))

    def H(t):
        return Hyperplane.from_vector(math.cos(angle * t) * n0 + math.sin(angle * t) * v)

    return H


@dataclass
class BandLanding:
    hyperplane: Hyperplane
    t: float
    distance: float
    sets: tuple
    evaluations: int


def land_in_band(E1, E2, H0, band, end_normal=None, angle=math.pi, n_sweep=32, max_bisect=60):
    """Find H on a rotation path from H0 whose polarized pair has orbit distance inside band.

    The orbit distance of the polarized pair is continuous along the path
    (up to cell jumps), so a sweep locates a bracket across the band and
    bisection lands inside it.
    """
    lo, hi = band
    if not lo < hi:
        raise PreconditionError(f"empty band {band!r}")
    path = rotation_path(H0, end_normal, angle)
    count = 0

    def f(t):
        nonlocal count
        count += 1
        H = path(t)
        table = build_pairing(E1.grid, H)
        A, B = polarize(E1, H, table), polarize(E2, H, table)
        return dist_to_orbit(A, B).value, H, (A, B)

    def side(v):
        return -1 if v <= lo else (1 if v >= hi else 0)

    if lo <= 0.0 and hi >= 1.0:
        v0, _, sets0 = f(0.0)
        return BandLanding(H0, 0.0, v0, sets0, count)
    v0, H_0, sets0 = f(0.0)
    s0 = side(v0)
    if s0 == 0:
        return BandLanding(H0, 0.0, v0, sets0, count)
    left, right = 0.0, None
    for t in np.linspace(0.0, 1.0, n_sweep + 1)[1:]:
        v, H, sets = f(float(t))
        s = side(v)
        if s == 0:
            return BandLanding(H, float(t), v, sets, count)
        if s == -s0:
            right = float(t)
            break
        left = float(t)
    if right is None:
        raise PreconditionError("no hyperplane on the path brackets the band")
    for _ in range(max_bisect):
        mid = 0.5 * (left + right)
        v, H, sets = f(mid)
        s = side(v)
        if s == 0:
            return BandLanding(H, mid, v, sets, count)
        if s == s0:
            left = mid
        else:
            right = mid
    raise ConvergenceError("bisection could not land inside the band (a single cell jump spans it)", residual=right - left)
