"""Distance from a pair of sets to the rotation orbit of a pair of concentric caps.

    dist = min_p max_j |E_j symdiff C_p(r_j)|

The minimum over p is approximated by an exhaustive sweep over every grid
node (ring-window overlap counts, so the sweep is cheap), followed by a
short local pattern descent from the best few nodes and both poles,
refined far below the cell scale since caps need not be centred on a node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError
from .functional import ring_pair_halfwidths, window_halfwidths, window_sums
from .set_model import in_cap
from .sphere_core import Point, cap_height, north_pole

N_STARTS = 5
MIN_STEP = 1e-4  # descent stops below this many cell diameters


def cap_overlap(E, p, r):
    """sigma(E intersect C_p(r)) on the grid."""
    p = p.coords if isinstance(p, Point) else np.asarray(p, dtype=float)
    inside = in_cap(E.grid.nodes, p, math.cos(r))
    return int(np.count_nonzero(inside & E.occupancy)) * E.grid.cell_measure


@dataclass
class DistanceResult:
    value: float
    center: Point
    per_set: tuple
    coarse_value: float
    evaluations: int

    def to_dict(self):
        return {
            "value": self.value,
            "center": [float(v) for v in self.center.coords],
            "per_set": list(self.per_set),
            "coarse_value": self.coarse_value,
        }


def _overlaps_all_nodes(E, height):
    """(overlap counts, cap cell counts) for caps of the given height centred at every node."""
    g = E.grid
    n = g.n_phi
    if g.d == 1:
        L = int(window_halfwidths(height, n))
        width = 0 if L < 0 else min(2 * L + 1, n)
        return window_sums(E.occupancy, L), np.full(n, width, np.int64)

    rows = E.rows
    c = rows.sum(axis=1).astype(np.int64)
    L = ring_pair_halfwidths(g, height)
    full_window = 2 * L + 1 >= n
    width = np.where(L < 0, 0, np.minimum(2 * L + 1, n)).astype(np.int64)
    cap_counts = width.sum(axis=1)

    easy = np.where(full_window, c[None, :], np.where((c == n)[None, :], width, 0))
    easy = np.where(L < 0, 0, easy).sum(axis=1)
    out = np.repeat(easy[:, None], n, axis=1)

    partial = np.flatnonzero((c > 0) & (c < n))
    if partial.size:
        H = n // 2
        sub = rows[partial].astype(np.int64)
        ext = np.concatenate([sub[:, n - H:], sub, sub[:, :H]], axis=1)
        cs = np.concatenate([np.zeros((partial.size, 1), np.int64), np.cumsum(ext, axis=1)], axis=1)
        Lp = L[:, partial]
        active = (Lp >= 0) & ~full_window[:, partial]
        Ls = np.where(active, Lp, 0)
        m = np.arange(n)
        ridx = np.arange(partial.size)[:, None]
        for k in range(g.n_t):
            if not active[k].any():
                continue
            sel = np.flatnonzero(active[k])
            Lk = Ls[k, sel][:, None]
            win = cs[ridx[sel], m[None, :] + H + 1 + Lk] - cs[ridx[sel], m[None, :] + H - Lk]
            out[k] += win.sum(axis=0)
    return out.reshape(-1), np.repeat(cap_counts, n)


def _tangent_moves(p, step):
    if p.size == 2:
        v = np.array([-p[1], p[0]])
        dirs = [v, -v]
    else:
        z = np.array([0.0, 0.0, 1.0])
        e1 = np.cross(z, p)
        if np.linalg.norm(e1) < 1e-8:
            e1 = np.cross(np.array([1.0, 0.0, 0.0]), p)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(p, e1)
        r = 1.0 / math.sqrt(2.0)
        dirs = [e1, -e1, e2, -e2, r * (e1 + e2), r * (e1 - e2), r * (-e1 + e2), -r * (e1 + e2)]
    c, s = math.cos(step), math.sin(step)
    out = []
    for v in dirs:
        q = c * p + s * v
        out.append(q / np.linalg.norm(q))
    return out


def dist_to_orbit(E1, E2, triple=None, radii=None, n_starts=N_STARTS, min_step=None):
    """Orbit distance of (E1, E2) to concentric cap pairs.

    Radii come from the triple when given, else from explicit radii, else from
    caps with the same measure as each set.  Each term uses
    the rasterized cap C_p, so a set that is itself a rasterized cap centred
    at a node has distance exactly zero.
    """
    g = E1.grid
    if E2.grid != g:
        raise GridMismatchError("dist_to_orbit needs both sets on one grid")
    if triple is not None:
        radii = (triple.r1, triple.r2)
    elif radii is None:
        radii = tuple(math.acos(cap_height(E.measure, g.d)) for E in (E1, E2))
    heights = [math.cos(r) for r in radii]
    sets = (E1, E2)
    counts = [E.count for E in sets]

    terms = []
    for E, h, cnt in zip(sets, heights, counts):
        ov, cap_cnt = _overlaps_all_nodes(E, h)
        terms.append(cnt + cap_cnt - 2 * ov)
    coarse = np.maximum(terms[0], terms[1])
    order = np.lexsort((np.arange(coarse.size), coarse))[:n_starts]
    coarse_best = int(coarse[order[0]])

    nodes = g.nodes

    def value(p):
        vals = []
        for E, h, cnt in zip(sets, heights, counts):
            inside = in_cap(nodes, p, h)
            cap_cnt = int(np.count_nonzero(inside))
            ov = int(np.count_nonzero(inside & E.occupancy))
            vals.append(cnt + cap_cnt - 2 * ov)
        return max(vals), vals

    # the poles lie on the grid's symmetry axis but are never nodes
    pole = north_pole(g.d)
    starts = [np.array(nodes[i]) for i in order] + [pole, -pole]
    stop = (MIN_STEP if min_step is None else min_step) * g.cell_diameter
    evals = 0
    best = None
    for p in starts:
        v, parts = value(p)
        evals += 1
        step = g.cell_diameter
        while step >= stop:
            improved = False
            for q in _tangent_moves(p, step):
                vq, pq = value(q)
                evals += 1
                if vq < v:
                    p, v, parts, improved = q, vq, pq, True
            if not improved:
                step *= 0.5
        if best is None or v < best[0]:
            best = (v, p, parts)
    v, p, parts = best
    mu = g.cell_measure
    return DistanceResult(
        value=v * mu,
        center=Point.normalized(p),
        per_set=tuple(x * mu for x in parts),
        coarse_value=coarse_best * mu,
        evaluations=evals,
    )
