"""The trilinear form T(E1, E2, [a, 1]), cap kernels K_j and their slopes.

On a grid the form is a finite sum over occupied cell pairs,

    T = (cell measure)^2 * #{(x, y) in E1 x E2 : x . y >= a},

so it is evaluated as an exact integer count.  On both grids the dot product
of two cell centres depends only on their rings and on the azimuth offset,
and the admissible offsets form a contiguous circular window.  Each ring pair
therefore costs a window sum; pairs involving an empty or full ring reduce
to products of ring counts.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import GridMismatchError, PreconditionError
from .sphere_core import (
    AdmissibleTriple,
    boundary_cap_measure,
    cap_measure,
    weight_constant,
)

# pairs with x . y >= a - DOT_EPS are admissible (closed interval, roundoff safe)
DOT_EPS = 1e-12
QUAD_TOL = 1e-12
_CHUNK_ELEMENTS = 1 << 21


# ---------------------------------------------------------------------------
# grid evaluation


def window_halfwidths(u, n):
    """Largest m in [0, n//2] with cos(2 pi m / n) >= u - DOT_EPS, or -1 if none."""
    m = np.arange(n // 2 + 1)
    cos_asc = np.cos(2.0 * math.pi * m / n)[::-1]
    below = np.searchsorted(cos_asc, np.asarray(u) - DOT_EPS, side="left")
    return (cos_asc.size - below) - 1


def window_sums(rows, L):
    """Circular window sums: out[..., i] = sum_{|m| <= L} rows[..., i - m]."""
    rows = np.asarray(rows, dtype=np.int64)
    n = rows.shape[-1]
    if L < 0:
        return np.zeros_like(rows)
    if 2 * L + 1 >= n:
        return np.broadcast_to(rows.sum(axis=-1, keepdims=True), rows.shape).copy()
    ext = np.concatenate([rows[..., n - L:], rows, rows[..., :L]], axis=-1)
    cs = np.concatenate([np.zeros(rows.shape[:-1] + (1,), np.int64), np.cumsum(ext, axis=-1)], axis=-1)
    return cs[..., 2 * L + 1:] - cs[..., : n]


def ring_pair_halfwidths(grid, a, grid2=None):
    """Window half-widths L[k1, k2] of admissible azimuth offsets between rings."""
    t1 = grid.ring_heights
    t2 = (grid2 or grid).ring_heights
    s1 = np.sqrt(1.0 - t1 * t1)
    s2 = np.sqrt(1.0 - t2 * t2)
    u = (a - np.outer(t1, t2)) / np.outer(s1, s2)
    return window_halfwidths(u, grid.n_phi)


def _count_circle(o1, o2, L):
    return int(np.dot(o1.astype(np.int64), window_sums(o2, L)))


def _count_partial_block(o1_rows, cs2, L_block, n, H):
    """Sum over (row in block) x (row of o2) of o1 . window_L(o2) via prefix sums."""
    m = np.arange(n)
    c, p = L_block.shape
    rows2 = np.arange(p)[None, :, None]
    hi = cs2[rows2, m[None, None, :] + H + 1 + L_block[:, :, None]]
    lo = cs2[rows2, m[None, None, :] + H - L_block[:, :, None]]
    win = hi - lo
    return np.einsum("cm,cpm->cp", o1_rows.astype(np.int64), win)


def admissible_pair_count(E1, E2, a, workers=None):
    """#{(x, y) in E1 x E2 : x . y >= a} on a common grid (exact integer)."""
    g = E1.grid
    if E2.grid != g:
        raise GridMismatchError("admissible_pair_count needs a common grid")
    if g.d == 1:
        L = int(window_halfwidths(a, g.n_phi))
        return _count_circle(E1.occupancy, E2.occupancy, L)

    n = g.n_phi
    H = n // 2
    r1 = E1.rows
    r2 = E2.rows
    c1 = r1.sum(axis=1).astype(np.int64)
    c2 = r2.sum(axis=1).astype(np.int64)
    L = ring_pair_halfwidths(g, a)
    width = np.where(L < 0, 0, np.minimum(2 * L + 1, n)).astype(np.int64)
    full_window = 2 * L + 1 >= n

    part1 = (c1 > 0) & (c1 < n)
    part2 = (c2 > 0) & (c2 < n)
    # pairs needing a window sum: both rings partial, window nonempty and not full
    need = part1[:, None] & part2[None, :] & (L >= 0) & ~full_window

    easy = np.where(
        full_window,
        c1[:, None] * c2[None, :],
        np.where(
            (c1 == n)[:, None], width * c2[None, :],
            np.where((c2 == n)[None, :], width * c1[:, None], 0),
        ),
    )
    easy = np.where(L < 0, 0, easy)
    total = int(easy[~need].sum())

    rows1 = np.flatnonzero(need.any(axis=1))
    rows2 = np.flatnonzero(need.any(axis=0))
    if rows1.size == 0:
        return total
    sub2 = r2[rows2].astype(np.int64)
    ext = np.concatenate([sub2[:, n - H:], sub2, sub2[:, :H]], axis=1)
    cs2 = np.concatenate([np.zeros((rows2.size, 1), np.int64), np.cumsum(ext, axis=1)], axis=1)
    Lsub = L[np.ix_(rows1, rows2)]
    mask = need[np.ix_(rows1, rows2)]
    Lsafe = np.where(mask, Lsub, 0)
    step = max(1, _CHUNK_ELEMENTS // max(1, rows2.size * n))
    blocks = [slice(i, min(i + step, rows1.size)) for i in range(0, rows1.size, step)]

    def work(b):
        vals = _count_partial_block(r1[rows1[b]], cs2, Lsafe[b], n, H)
        return int(vals[mask[b]].sum())

    if workers and workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    # integer partial sums, combined in block order
    for part in parts:
        total += part
    return total


def _brute_force_count(E1, E2, a, chunk=2048):
    X1 = E1.grid.nodes[E1.occupancy]
    X2 = E2.grid.nodes[E2.occupancy]
    count = 0
    for i in range(0, X1.shape[0], chunk):
        count += int(np.count_nonzero(X1[i:i + chunk] @ X2.T >= a - DOT_EPS))
    return count


def evaluate_T(E1, E2, a, workers=None):
    """T(E1, E2, [a, 1]) for sets on grids of the same dimension.

    Sets on a common grid use the ring-window count; sets on different grids
    fall back to an all-pairs sum, which is only practical for small grids.
    """
    if E1.d != E2.d:
        raise GridMismatchError("sets live on spheres of different dimension")
    if E1.grid == E2.grid:
        count = admissible_pair_count(E1, E2, a, workers=workers)
        return count / (E1.grid.n_cells * E1.grid.n_cells)
    count = _brute_force_count(E1, E2, a)
    return count * E1.grid.cell_measure * E2.grid.cell_measure


# ---------------------------------------------------------------------------
# cap kernels


def _other(j):
    if j not in (1, 2):
        raise PreconditionError(f"index must be 1 or 2, got {j!r}")
    return 2 if j == 1 else 1


def _arc_overlap(rho1, rho2, sep):
    """Normalized length of [-rho1, rho1] intersected with the circular arc [sep - rho2, sep + rho2]."""
    total = 0.0
    for shift in (-2.0 * math.pi, 0.0, 2.0 * math.pi):
        lo = max(-rho1, sep - rho2 + shift)
        hi = min(rho1, sep + rho2 + shift)
        total += max(0.0, hi - lo)
    return min(total, 2.0 * rho1, 2.0 * rho2) / (2.0 * math.pi)


def _lens_area(rho1, rho2, sep):
    """Normalized area of the intersection of two caps on S^2 (angular radii rho1, rho2)."""
    area1 = (1.0 - math.cos(rho1)) / 2.0
    area2 = (1.0 - math.cos(rho2)) / 2.0
    if sep >= rho1 + rho2:
        return 0.0
    if sep <= abs(rho1 - rho2):
        return min(area1, area2)
    if sep >= 2.0 * math.pi - rho1 - rho2:
        # together the caps cover the sphere
        return area1 + area2 - 1.0
    c1, c2, cs = math.cos(rho1), math.cos(rho2), math.cos(sep)
    s1, s2, ss = math.sin(rho1), math.sin(rho2), math.sin(sep)

    def acos(v):
        return math.acos(min(1.0, max(-1.0, v)))

    area = 2.0 * (
        math.pi
        - acos((cs - c1 * c2) / (s1 * s2))
        - c1 * acos((c2 - cs * c1) / (ss * s1))
        - c2 * acos((c1 - cs * c2) / (ss * s2))
    )
    return area / (4.0 * math.pi)


def _cap_intersection_quad(d, rho_k, h_k, a, t):
    """sigma(cap(N, rho_k) & {y : x_t . y >= a}) by integrating over slice heights.

    Independent of the closed forms; works for every d >= 1.
    """
    if t >= 1.0:
        return cap_measure(max(h_k, a), d)
    if t <= -1.0:
        return max(0.0, cap_measure(h_k, d) - cap_measure(min(1.0, max(-1.0, -a)), d))
    psi = math.acos(t)
    r3 = math.acos(a)
    st = math.sqrt(1.0 - t * t)
    c = weight_constant(d)

    def integrand(rho):
        tau = math.cos(rho)
        srho = math.sin(rho)
        if srho == 0.0:
            frac = 1.0 if t * tau >= a else 0.0
        else:
            u = (a - t * tau) / (st * srho)
            frac = boundary_cap_measure(u, d - 1)
        return frac * c * srho ** (d - 1)

    pts = sorted({p for p in (abs(psi - r3), psi + r3, 2 * math.pi - psi - r3) if 0.0 < p < rho_k})
    val, _ = integrate.quad(integrand, 0.0, rho_k, points=pts or None, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
    return val


def kernel_K(triple, j, t, method="auto"):
    """K_j(t) = sigma(B_k & {y : x . y >= a}) for any x at height t (k the other index)."""
    k = _other(j)
    if not -1.0 <= t <= 1.0:
        raise PreconditionError(f"height must lie in [-1, 1], got {t!r}")
    h_k = triple.height(k)
    rho_k = math.acos(h_k)
    r3 = math.acos(max(-1.0, min(1.0, triple.a)))
    sep = math.acos(t)
    if method == "quad" or (method == "auto" and triple.d >= 3):
        return _cap_intersection_quad(triple.d, rho_k, h_k, triple.a, t)
    if triple.d == 1:
        return _arc_overlap(rho_k, r3, sep)
    if triple.d == 2:
        return _lens_area(rho_k, r3, sep)
    raise PreconditionError(f"no closed form for d = {triple.d}")


@dataclass(frozen=True)
class KernelProfile:
    triple: AdmissibleTriple
    j: int
    mesh: np.ndarray
    samples: np.ndarray

    @property
    def mesh_step(self):
        return float(self.mesh[1] - self.mesh[0])


def kernel_profile(triple, j, n=2001):
    mesh = np.linspace(-1.0, 1.0, n)
    samples = np.array([kernel_K(triple, j, float(t)) for t in mesh])
    return KernelProfile(triple, j, mesh, samples)


def gamma(triple, j, step=1e-4):
    """Slope K_j'(h_j): central difference, Richardson-extrapolated once."""
    t = triple.height(j)

    def K(x):
        return kernel_K(triple, j, x)

    def central(h):
        return (K(t + h) - K(t - h)) / (2.0 * h)

    def forward(h, sign):
        # second-order one-sided difference
        return sign * (-3.0 * K(t) + 4.0 * K(t + sign * h) - K(t + 2 * sign * h)) / (2.0 * h)

    if t - step >= -1.0 and t + step <= 1.0:
        d1, d2 = central(step), central(step / 2)
        slope = (4.0 * d2 - d1) / 3.0
    else:
        sign = 1.0 if t - step < -1.0 else -1.0
        slope = forward(step / 2, sign)
    return max(0.0, slope)


def T_caps(triple, tol=1e-9):
    """T(E1*, E2*, [a, 1]) = int over B_1 of K_1, as a 1-D quadrature in the polar angle."""
    d = triple.d
    r1 = math.acos(triple.h1)
    r2 = math.acos(triple.h2)
    r3 = math.acos(max(-1.0, min(1.0, triple.a)))
    c = weight_constant(d)

    def integrand(rho):
        return kernel_K(triple, 1, math.cos(rho)) * c * math.sin(rho) ** (d - 1)

    kinks = sorted({p for p in (abs(r2 - r3), r2 + r3, 2 * math.pi - r2 - r3) if 0.0 < p < r1})
    val, _ = integrate.quad(integrand, 0.0, r1, points=kinks or None, epsabs=tol, epsrel=tol * 1e-3, limit=200)
    return val
