import json
import math

import numpy as np
import pytest

from sphere_symm.errors import AmplitudeError, CollarError, PreconditionError
from sphere_symm.functional import T_caps, evaluate_T
from sphere_symm.harmonics import associated_function
from sphere_symm.perturbation import (DEFAULT_S, build_perturbed_sets, default_collar, expansion_check,
                                      harmonic_family, max_amplitude, measure_deficit, predicted_c2,
                                      rotation_family, slice_decompose_T, solve_phi, truncate_to_collar)
from sphere_symm.set_model import Grid, SphericalSet, north_cap, random_level_set, random_set
from sphere_symm.sphere_core import cap_measure, classify_triple, weight

HEMI = classify_triple(0.5, 0.5, 0.0, 2)
FROZEN = classify_triple(0.3, 0.6, 0.2, 2)


def test_solve_phi_examples():
    assert solve_phi(0.0, 0.3, 0.4, 2) == 0.0
    for G in (-0.7, 0.2, 1.3):
        assert solve_phi(G, 0.05, 0.4, 2) == pytest.approx(2 * 0.05 * G, abs=1e-12)


@pytest.mark.parametrize("d", [1, 3])
def test_solve_phi_residual_and_first_order(d):
    h, G = 0.35, 0.8
    for s in (0.02, 0.01):
        phi = solve_phi(G, s, h, d)
        assert abs(cap_measure(h - phi, d) - cap_measure(h, d) - s * G) <= 1e-12
    # Richardson: 4 phi(s/2) - phi(s) cancels the s^2 term
    s = 1e-3
    lin = 4 * solve_phi(G, s / 2, h, d) - solve_phi(G, s, h, d)
    assert lin == pytest.approx(s * G / weight(h, d), rel=1e-5)


def test_solve_phi_amplitude_error():
    with pytest.raises(AmplitudeError) as exc:
        solve_phi(1.0, 10.0, 0.4, 2)
    assert exc.value.max_amplitude == pytest.approx(max_amplitude([1.0], 0.4, 2))
    assert max_amplitude([1.0, -1.0], 0.4, 2) == pytest.approx(min(cap_measure(0.4, 2), 1 - cap_measure(0.4, 2)))


def test_perturbed_sets_at_zero_are_caps():
    g = Grid.sphere(64, 64)
    fam = harmonic_family(FROZEN, g, 2)
    E1, E2 = build_perturbed_sets(fam, 0.0)
    assert E1 == north_cap(g, FROZEN.h1) and E2 == north_cap(g, FROZEN.h2)


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_perturbed_sets_keep_counts(degree):
    g = Grid.sphere(64, 64)
    fam = harmonic_family(FROZEN, g, degree)
    for s in (0.01, 0.05):
        E1, E2 = build_perturbed_sets(fam, s)
        assert E1.count == north_cap(g, FROZEN.h1).count
        assert E2.count == north_cap(g, FROZEN.h2).count


def test_associated_function_tracks_sG():
    g = Grid.sphere(128, 1024)
    fam = harmonic_family(FROZEN, g, 2)
    floor = 2.0 / g.n_t  # one ring of mass per column, relative to mu
    for s in (0.01, 0.03):
        E1, _ = build_perturbed_sets(fam, s)
        F = associated_function(E1, FROZEN, 1)[0]
        assert (F - fam.G1.scaled(s)).norm() <= floor + 5.0 * s * s


def test_circle_family():
    g = Grid.circle(1 << 14)
    tr = classify_triple(0.3, 0.6, 0.2, 1)
    fam = harmonic_family(tr, g, 1)
    E1, E2 = build_perturbed_sets(fam, 0.02)
    assert E1.count == north_cap(g, tr.h1).count
    F = associated_function(E1, tr, 1)[0]
    assert F.values == pytest.approx([-0.02, 0.02], abs=2.0 / g.n_phi)


def test_predicted_c2_hemisphere():
    g = Grid.sphere(64, 64)
    assert predicted_c2(harmonic_family(HEMI, g, 2)) == pytest.approx(1 / math.pi, rel=1e-4)
    assert predicted_c2(harmonic_family(HEMI, g, 3)) == pytest.approx(1 / math.pi + 1 / (3 * math.pi), rel=1e-4)


def test_rotation_family_prediction_vanishes():
    g = Grid.sphere(64, 64)
    assert abs(predicted_c2(rotation_family(FROZEN, g))) < 1e-3 * predicted_c2(harmonic_family(FROZEN, g, 2))


def test_measure_deficit_small_grid():
    g = Grid.sphere(256, 256)
    fam = harmonic_family(FROZEN, g, 2, s_values=(0.02, 0.03, 0.04, 0.05))
    rep = measure_deficit(fam)
    assert rep.c2 > 0
    assert all(dv >= -g.eps_grid for dv in rep.deficits)
    assert rep.rel_error < 0.15
    payload = json.loads(rep.to_json())
    assert payload["kind"] == "deficit" and len(payload["samples"]) == 4


def test_measure_deficit_rejects():
    g = Grid.sphere(32, 32)
    with pytest.raises(PreconditionError):
        measure_deficit(harmonic_family(FROZEN, g, 2, s_values=(0.01, 0.02, 0.03)))
    with pytest.raises(PreconditionError):
        measure_deficit(harmonic_family(classify_triple(0.01, 0.01, 0.0, 2), g, 2))


def test_measure_deficit_workers_deterministic():
    g = Grid.sphere(48, 48)
    fam = harmonic_family(FROZEN, g, 2, s_values=(0.02, 0.03, 0.04, 0.05))
    assert measure_deficit(fam).to_json() == measure_deficit(fam, workers=3).to_json()


def test_expansion_matches_measured_T():
    g = Grid.sphere(256, 256)
    fam = harmonic_family(FROZEN, g, 2)
    E1, E2 = build_perturbed_sets(fam, 0.04)
    out = expansion_check(E1, E2, FROZEN)
    assert abs(out["gap"]) <= 0.05 * out["loss"]


# --- collar truncation


def test_truncation_identity_inside_collar():
    g = Grid.sphere(64, 64)
    E, _ = build_perturbed_sets(harmonic_family(FROZEN, g, 2), 0.02)
    tr = truncate_to_collar(E, FROZEN, 1, 0.3)
    assert tr.E_dagger == E


def test_truncation_constructed_instance():
    g = Grid.sphere(64, 64)
    h = FROZEN.h1
    B = north_cap(g, h)
    t, phi = g.heights, g.angles[g.azimuth_index]
    patch = (t < -0.6) & (phi < 0.5)
    m = int(np.count_nonzero(patch))
    # near slab: cells of B just above h, taken by height then azimuth
    inside = np.flatnonzero(B.occupancy)
    order = np.lexsort((g.azimuth_index[inside], t[inside] - h))
    slab = inside[order[:m]]
    occ = B.occupancy | patch
    occ[slab] = False
    E = SphericalSet(g, occ)
    res = truncate_to_collar(E, FROZEN, 1, 0.3)
    assert (res.E_dagger ^ E).count == 2 * m
    assert all(res.audit().values())


def test_truncation_rejects_narrow_collar():
    g = Grid.sphere(64, 64)
    E = random_set(0.3, 1, g)
    with pytest.raises(CollarError):
        truncate_to_collar(E, FROZEN, 1, 1.5 * 2.0 / g.n_t)


def test_truncation_audit_random():
    g = Grid.sphere(64, 64)
    rng = np.random.default_rng(11)
    for k in range(20):
        fam = harmonic_family(FROZEN, g, 1 + k % 4, phase=float(rng.uniform(0, 6)))
        E, _ = build_perturbed_sets(fam, 0.05)
        E = E ^ random_set(0.005, k, g)
        res = truncate_to_collar(E, FROZEN, 1, float(rng.uniform(0.5, 1.0)))
        assert all(res.audit().values())


def test_default_collar_scales_with_slope():
    assert default_collar(FROZEN, 0.01) == pytest.approx(4 / min(FROZEN.gammas) * 0.01)


# --- slice decomposition


def test_slice_identity():
    g = Grid.sphere(48, 32)
    for k in range(5):
        A, B = random_set(0.3, k, g), random_level_set(0.5, k + 50, g)
        for a in (-0.5, 0.2, 0.7):
            assert slice_decompose_T(A, B, a) == pytest.approx(evaluate_T(A, B, a), abs=1e-12)


def test_slice_caps_reduce_to_T_caps():
    g = Grid.sphere(128, 128)
    A, B = north_cap(g, FROZEN.h1), north_cap(g, FROZEN.h2)
    assert abs(slice_decompose_T(A, B, FROZEN.a) - T_caps(FROZEN)) <= 2 * g.eps_grid


def test_slice_full_admissible_branch():
    # a far below t1 t2 for polar rings: every ring pair with u <= -1 counts fully
    g = Grid.sphere(32, 16)
    A = north_cap(g, 0.8)
    assert slice_decompose_T(A, A, -0.99) == pytest.approx(A.measure ** 2, abs=1e-12)


def test_default_s_grid():
    assert len(DEFAULT_S) == 8 and DEFAULT_S[0] == pytest.approx(0.005) and DEFAULT_S[-1] == pytest.approx(0.05)
