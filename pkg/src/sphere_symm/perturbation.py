"""Harmonic perturbations of cap pairs, collar truncation, slice decomposition, deficits.

A perturbation moves the boundary of the j-th cap from t = h_j to
t = h_j - phi_j(theta, s), where phi_j is chosen so that the mass added in
each column is exactly s G_j(theta).  With the Jacobian used throughout the
associated function of E_j(s) is then s G_j up to rasterization.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AmplitudeError, CollarError, PreconditionError
from .functional import DOT_EPS, T_caps, _count_circle, evaluate_T, window_halfwidths
from .harmonics import BoundaryFunction, Q_form, associated_function
from .set_model import CAP_EPS, SphericalSet, north_cap
from .sphere_core import TripleClass, cap_measure, classify_triple, weight

PHI_TOL = 1e-12
DEFAULT_S = tuple(np.geomspace(0.005, 0.05, 8))


# ---------------------------------------------------------------------------
# perturbed sets


def _mass(h, phi, d):
    """int_{h - phi}^{h} w_d(t) dt."""
    return cap_measure(h - phi, d) - cap_measure(h, d)


def max_amplitude(G_values, h, d):
    """Largest s with every column target s G inside [-(cap mass), complement mass]."""
    G = np.asarray(G_values, dtype=float)
    above = cap_measure(h, d)
    below = 1.0 - above
    lim = [below / g for g in G if g > 0] + [above / -g for g in G if g < 0]
    return min(lim) if lim else math.inf


def solve_phi(G_value, s, h, d):
    """Signed phi with int_{h - phi}^{h} w_d = s G (vectorized; Newton with bisection fallback)."""
    G = np.atleast_1d(np.asarray(G_value, dtype=float))
    target = s * G
    above = cap_measure(h, d)
    if np.any(target > 1.0 - above) or np.any(target < -above):
        raise AmplitudeError(
            f"amplitude {s!r} exceeds the available mass on one side of the cap",
            max_amplitude=max_amplitude(G, h, d),
        )
    lo = np.full(G.shape, h - 1.0)
    hi = np.full(G.shape, h + 1.0)
    phi = np.zeros_like(G)
    if d != 1:
        phi = target / weight(h, d)
    phi = np.clip(phi, lo, hi)
    for _ in range(200):
        r = _mass(h, phi, d) - target
        if np.all(np.abs(r) <= PHI_TOL):
            break
        # mass is increasing in phi
        lo = np.where(r < 0, phi, lo)
        hi = np.where(r > 0, phi, hi)
        t = np.clip(h - phi, -1.0, 1.0)
        inner = np.abs(t) < 1.0
        w = np.zeros_like(t)
        w[inner] = weight(t[inner], d)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = phi - r / w
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        phi = np.where(bad, 0.5 * (lo + hi), step)
    phi = np.where(target == 0.0, 0.0, phi)
    return phi if np.ndim(G_value) else float(phi[0])


@dataclass
class PerturbationFamily:
    """Pair of same-degree boundary harmonics driving E_j(s) = {t >= h_j - phi_j}."""

    triple: object
    grid: object
    G1: BoundaryFunction
    G2: BoundaryFunction
    degree: int
    s_values: tuple = DEFAULT_S
    label: str = ""

    def G(self, j):
        return (self.G1, self.G2)[j - 1]

    def to_dict(self):
        return {
            "label": self.label,
            "degree": self.degree,
            "grid": self.grid.header(),
            "norms": [self.G1.norm(), self.G2.norm()],
            "s_values": [float(s) for s in self.s_values],
        }


def harmonic_family(triple, grid, degree, amplitudes=(1.0, 1.0), phase=0.0, s_values=DEFAULT_S):
    """G_j = amplitude_j times the unit-norm degree-n harmonic (same phase for both sets)."""
    if degree < 1:
        raise PreconditionError("a mass-preserving family needs degree >= 1")
    G1 = BoundaryFunction.harmonic(grid.d, grid.n_columns, degree, phase, amplitudes[0])
    G2 = BoundaryFunction.harmonic(grid.d, grid.n_columns, degree, phase, amplitudes[1])
    return PerturbationFamily(triple, grid, G1, G2, degree, tuple(s_values), f"degree-{degree}")


def rotation_family(triple, grid, s_values=DEFAULT_S):
    """Degree-1 family induced by tilting both caps by the same angle.

    Tilting a cap by epsilon moves its column masses by
    epsilon w(h) sqrt(1 - h^2) times the degree-1 harmonic; the larger of the
    two amplitudes is normalized to 1.
    """
    k = [weight(h, grid.d) * math.sqrt(1.0 - h * h) for h in triple.heights]
    top = max(k)
    fam = harmonic_family(triple, grid, 1, (k[0] / top, k[1] / top), 0.0, s_values)
    fam.label = "rotation"
    return fam


def _rebalance(occ, key, target):
    """Flip the cells with the smallest key until the count equals target."""
    count = int(np.count_nonzero(occ))
    if count == target:
        return occ
    occ = occ.copy()
    remove = count > target
    cand = np.flatnonzero(occ if remove else ~occ)
    # distance above (remove) or below (add) the boundary
    k = key[cand] if remove else -key[cand]
    order = np.lexsort((cand, k))
    occ[cand[order[: abs(count - target)]]] = not remove
    return occ


def build_perturbed_sets(family, s, balance_mass=True):
    """(E_1(s), E_2(s)) rasterized at cell centres, with the cap cell counts restored exactly."""
    g = family.grid
    out = []
    for j in (1, 2):
        h = family.triple.height(j)
        try:
            phi = solve_phi(family.G(j).values, s, h, g.d)
        except AmplitudeError as exc:
            raise AmplitudeError(str(exc), max_amplitude=exc.max_amplitude) from None
        boundary = h - np.asarray(phi)[g.column_index]
        key = g.heights - boundary
        occ = key >= -CAP_EPS
        if balance_mass:
            occ = _rebalance(occ, key, north_cap(g, h).count)
        out.append(SphericalSet(g, occ))
    return tuple(out)


# ---------------------------------------------------------------------------
# collar truncation


def default_collar(triple, delta):
    """lambda delta with lambda = 4 / min_j gamma_j."""
    return 4.0 / min(triple.gammas) * delta


def _cell_height(g):
    return 2.0 / g.n_t if g.d == 2 else 2.0 * math.pi / g.n_phi


@dataclass
class Truncation:
    E: SphericalSet
    E_dagger: SphericalSet
    B: SphericalSet
    far: np.ndarray  # cells of E symdiff B outside the collar

    def audit(self):
        """The four defining properties, checked exactly on occupancy bits."""
        e, ed, b = self.E.occupancy, self.E_dagger.occupancy, self.B.occupancy
        sd, sd_dag, moved = e ^ b, ed ^ b, e ^ ed
        far_count = int(np.count_nonzero(self.far))
        return {
            "measure": self.E.count == self.E_dagger.count,
            "split": bool(np.array_equal(sd, sd_dag | moved) and not np.any(sd_dag & moved)),
            "far_moved": bool(np.all(moved[self.far])),
            "bounded": int(np.count_nonzero(moved)) <= 2 * far_count,
        }


def truncate_to_collar(E, triple, j, collar):
    """E dagger: E with EΔB cut back to the collar |t - h_j| <= collar, measure restored.

    Far cells of E∖B are removed and far cells of B∖E are added.  The net
    count change is undone by flipping near cells of EΔB toward B, nearest the
    boundary height first, azimuth second, so E dagger always lies between E
    and B.
    """
    g = E.grid
    if collar <= 2.0 * _cell_height(g):
        raise CollarError(f"collar {collar!r} is not wider than two cell heights")
    h = triple.height(j)
    B = north_cap(g, h)
    e, b = E.occupancy, B.occupancy
    dist = np.abs(g.heights - h)
    far = (e ^ b) & (dist > collar)
    occ = np.where(far, b, e)
    diff = int(np.count_nonzero(occ)) - E.count
    if diff:
        near = (e ^ b) & ~far
        # diff > 0: remove near cells of E∖B; diff < 0: add near cells of B∖E
        pool = np.flatnonzero(near & (e if diff > 0 else b))
        if pool.size < abs(diff):
            raise CollarError("collar too narrow to restore the measure")
        order = np.lexsort((g.azimuth_index[pool], dist[pool]))
        occ[pool[order[: abs(diff)]]] = diff < 0
    return Truncation(E, SphericalSet(g, occ), B, far)


# ---------------------------------------------------------------------------
# slice decomposition


def slice_decompose_T(E1, E2, a):
    """T on S^2 as a double sum over ring pairs of circle functionals.

    Ring k of E is the subset of S^1 at height t_k.  A ring pair contributes
    T'(slice_1, slice_2, [u, 1]) with u = (a - t1 t2) / (s1 s2) clamped to
    [-1, 1]; the Jacobian weight of every ring is 1 / n_t.
    """
    g = E1.grid
    if g.d != 2 or E2.grid != g:
        raise PreconditionError("slice decomposition needs two sets on one S^2 grid")
    n = g.n_phi
    t = g.ring_heights
    s = np.sqrt(1.0 - t * t)
    rows1 = [r for r in E1.rows]
    rows2 = [r for r in E2.rows]
    c1 = E1.rows.sum(axis=1)
    c2 = E2.rows.sum(axis=1)
    ring_w = 1.0 / g.n_t
    total = 0.0
    for k1 in np.flatnonzero(c1):
        for k2 in np.flatnonzero(c2):
            u = (a - t[k1] * t[k2]) / (s[k1] * s[k2])
            if u > 1.0 + DOT_EPS:
                continue  # empty interval
            u = max(-1.0, min(1.0, u))
            count = _count_circle(rows1[k1], rows2[k2], int(window_halfwidths(u, n)))
            total += count / (n * n) * ring_w * ring_w
    return total


# ---------------------------------------------------------------------------
# deficits


def predicted_c2(family):
    tr = family.triple
    lead = 0.0
    for j in (1, 2):
        lead += tr.slope(j) / weight(tr.height(j), tr.d) * family.G(j).norm() ** 2
    return 0.5 * lead - Q_form(family.G1, family.G2, tr)


@dataclass
class DeficitReport:
    family: PerturbationFamily
    s_values: list
    T_values: list
    T_ref: float
    deficits: list
    c2: float
    c3: float
    cubic_remainder: float
    predicted: float
    rel_error: float
    slope: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema": "sphere-symm/1",
            "kind": "deficit",
            "triple": self.family.triple.to_dict(),
            "family": self.family.to_dict(),
            "T_ref": self.T_ref,
            "T_grid_ref": self.extra.get("T_grid_ref"),
            "samples": [{"s": s, "T": T, "deficit": dv} for s, T, dv in zip(self.s_values, self.T_values, self.deficits)],
            "fit": {"c2": self.c2, "c3": self.c3, "cubic_remainder": self.cubic_remainder, "slope": self.slope},
            "predicted_c2": self.predicted,
            "rel_error": self.rel_error,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def loglog_slope(s, y):
    s, y = np.asarray(s, dtype=float), np.asarray(y, dtype=float)
    if np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(np.log(s), np.log(y), 1)[0])


def measure_deficit(family, workers=None):
    """Measure T(E*) - T(E(s)) over the family's amplitudes and fit c2 s^2 + c3 s^3."""
    tr = family.triple
    if tr.klass != TripleClass.STRICT:
        raise PreconditionError(f"deficit law needs a strict triple, got {tr.klass.value}")
    s_vals = [float(s) for s in family.s_values]
    if len(s_vals) < 4:
        raise PreconditionError("the quadratic-cubic fit needs at least 4 amplitudes")
    a = tr.a
    # Closed-form T of caps holding exactly the rasterized cap measures (the
    # perturbed sets keep those cell counts).  The grid value of the s = 0
    # caps carries a ring-window rounding bias of the order of c2 s^2.
    ref = build_perturbed_sets(family, 0.0)
    T_ref = T_caps(classify_triple(ref[0].measure, ref[1].measure, a, tr.d, with_slopes=False))
    T_grid_ref = evaluate_T(ref[0], ref[1], a)

    def one(s):
        E1, E2 = build_perturbed_sets(family, s)
        return evaluate_T(E1, E2, a)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            T_vals = list(pool.map(one, s_vals))
    else:
        T_vals = [one(s) for s in s_vals]
    s_arr = np.asarray(s_vals)
    dfc = T_ref - np.asarray(T_vals)
    A = np.stack([s_arr ** 2, s_arr ** 3], axis=1)
    (c2, c3), *_ = np.linalg.lstsq(A, dfc, rcond=None)
    remainder = float(np.max(np.abs(dfc - c2 * s_arr ** 2) / s_arr ** 3))
    pred = predicted_c2(family)
    rel = abs(c2 - pred) / abs(pred) if pred != 0 else float("nan")
    band = (s_arr >= 0.01 - 1e-12) & (s_arr <= 0.05 + 1e-12)
    slope = loglog_slope(s_arr[band], dfc[band]) if band.sum() >= 2 else loglog_slope(s_arr, dfc)
    return DeficitReport(family, s_vals, [float(v) for v in T_vals], float(T_ref), [float(v) for v in dfc],
                         float(c2), float(c3), remainder, float(pred), float(rel), slope,
                         {"T_grid_ref": float(T_grid_ref)})


def expansion_check(E1, E2, triple):
    """Measured T(E) against T(E*) - sum_j gamma_j / (2 w(h_j)) (|F+|^2 + |F-|^2) + Q(F1, F2)."""
    g = E1.grid
    caps = [north_cap(g, h) for h in triple.heights]
    T_star = evaluate_T(caps[0], caps[1], triple.a)
    T_E = evaluate_T(E1, E2, triple.a)
    F = []
    loss = 0.0
    for j, E in ((1, E1), (2, E2)):
        Fj, Fp, Fm = associated_function(E, triple, j)
        F.append(Fj)
        loss += 0.5 * triple.slope(j) / weight(triple.height(j), triple.d) * (Fp.norm() ** 2 + Fm.norm() ** 2)
    q = Q_form(F[0], F[1], triple)
    bound = T_star - loss + q
    return {
        "T": T_E,
        "T_star": T_star,
        "loss": loss,
        "Q": q,
        "bound": bound,
        "gap": bound - T_E,
        "delta": max((E ^ c).measure for E, c in zip((E1, E2), caps)),
    }
