import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sphere_symm.errors import PreconditionError
from sphere_symm.functional import evaluate_T
from sphere_symm.orbit_distance import dist_to_orbit
from sphere_symm.polarization import (build_pairing, converge_to_caps, dist_to_north, land_in_band,
                                      polarize, recentering_normal)
from sphere_symm.set_model import Grid, SphericalSet, north_cap, random_level_set, random_set, rasterize_cap
from sphere_symm.sphere_core import Cap, Hyperplane, Point, north_pole, tilt_rotation

G2 = Grid.sphere(48, 40)
G1 = Grid.circle(240)


def _random_plane(rng, d):
    return Hyperplane.from_vector(rng.standard_normal(d + 1))


def test_pairing_is_partial_involution():
    rng = np.random.default_rng(3)
    for g in (G1, G2):
        for _ in range(10):
            t = build_pairing(g, _random_plane(rng, g.d))
            allc = np.concatenate([t.plus, t.minus, t.fixed])
            assert np.array_equal(np.sort(allc), np.arange(g.n_cells))
            side = g.nodes @ t.hyperplane.normal
            assert np.all(side[t.plus] > 0) and np.all(side[t.minus] < 0)


def test_equator_pairs_rings():
    g = Grid.sphere(32, 20)
    t = build_pairing(g, Hyperplane(north_pole(2)))
    assert t.fixed.size == 0
    ring = lambda i: i // g.n_phi  # noqa: E731  (ring-major layout)
    rp = np.array([ring(i) for i in t.plus])
    rm = np.array([ring(i) for i in t.minus])
    assert np.all(rp + rm == g.n_t - 1)
    # same azimuth
    assert np.all(t.plus % g.n_phi == t.minus % g.n_phi)


def test_circle_grid_aligned_plane_pairs_everything_off_h():
    g = Grid.circle(240)
    # normal at a whole number of cells: the reflection maps cell centres to cell centres
    ang = 2 * math.pi * 17 / 240
    t = build_pairing(g, Hyperplane.from_vector([math.cos(ang), math.sin(ang)]))
    side = np.abs(g.nodes @ t.hyperplane.normal)
    assert np.all(side[t.fixed] <= math.sin(g.half_cell) * (1 + 1e-5))
    assert t.fixed.size <= 4  # two cells at each of the two crossings


@pytest.mark.parametrize("shape", [(32, 32), (64, 64), (96, 48)])
def test_fixed_fraction_small(shape):
    rng = np.random.default_rng(0)
    g = Grid.sphere(*shape)
    worst = max(build_pairing(g, _random_plane(rng, 2)).fixed_fraction for _ in range(100))
    # thin band around H plus a few cells the matching could not place
    assert worst <= 4.0 / min(shape)


def test_pairs_are_close_to_reflections():
    rng = np.random.default_rng(5)
    g = Grid.sphere(64, 64)
    for _ in range(10):
        t = build_pairing(g, _random_plane(rng, 2))
        n = t.hyperplane.normal
        X = g.nodes
        err = np.linalg.norm(X[t.minus] - (X[t.plus] - 2 * (X[t.plus] @ n)[:, None] * n), axis=1)
        assert err.mean() <= 0.5 * g.cell_diameter


def test_polarize_examples():
    H = Hyperplane(north_pole(2))
    up = north_cap(G2, 0.3)
    assert polarize(up, H) == up
    down = SphericalSet(G2, up.occupancy[::-1].copy())  # mirror across the equator
    assert polarize(down, H) == up


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 0.95), st.sampled_from([1, 2]))
def test_polarize_invariants(seed, e, d):
    g = G1 if d == 1 else G2
    rng = np.random.default_rng(seed)
    H = _random_plane(rng, d)
    E = random_set(e, seed, g)
    EH = polarize(E, H)
    assert EH.count == E.count
    assert polarize(EH, H) == EH
    plus = g.nodes @ build_pairing(g, H).hyperplane.normal > 0
    assert np.count_nonzero(EH.occupancy & plus) >= np.count_nonzero(E.occupancy & plus)


def test_polarize_T_monotone():
    rng = np.random.default_rng(1)
    g = Grid.sphere(32, 24)
    for k in range(30):
        A = random_set(rng.uniform(0.1, 0.9), 2 * k, g)
        B = random_level_set(rng.uniform(0.1, 0.9), 2 * k + 1, g)
        H = _random_plane(rng, 2)
        a = float(rng.uniform(-0.8, 0.8))
        t0 = evaluate_T(A, B, a)
        t1 = evaluate_T(polarize(A, H), polarize(B, H), a)
        assert t1 >= t0 - g.eps_grid


def test_cache_key_is_quantized():
    H = Hyperplane.from_vector([0.3, 0.4, 0.5])
    H2 = Hyperplane.from_vector(H.normal + 1e-9)
    assert build_pairing(G2, H) is build_pairing(G2, H2)


def test_flow_stops_immediately_on_caps():
    A, B = north_cap(G2, 0.2), north_cap(G2, -0.4)
    traj = converge_to_caps(A, B)
    assert traj.converged and len(traj.steps) == 1 and traj.steps[0].step == 0


def test_single_reflection_centres_a_cap():
    g = Grid.sphere(128, 128)
    p = tilt_rotation([0.9, 0.4]) @ north_pole(2)
    E = rasterize_cap(Cap.with_measure(Point(p), 0.2), g)
    H = Hyperplane.from_vector(north_pole(2) - p)
    assert dist_to_north(polarize(E, H)) <= 4 * g.eps_grid


def test_recentering_normal_points_north():
    g = Grid.sphere(64, 64)
    p = tilt_rotation([0.7, 0.0]) @ north_pole(2)
    E = rasterize_cap(Cap.with_measure(Point(p), 0.3), g)
    n = recentering_normal(E, E)
    assert n @ north_pole(2) > 0


@pytest.mark.parametrize("schedule", ["random", "deterministic"])
def test_flow_converges(schedule):
    g = Grid.sphere(64, 64)
    A, B = random_level_set(0.3, 4, g), random_set(0.55, 5, g)
    traj = converge_to_caps(A, B, schedule=schedule, seed=2, max_steps=400, target=0.05, a=0.1, record_T=True)
    assert traj.converged
    assert traj.terminal[0].count == A.count and traj.terminal[1].count == B.count
    Ts = [s.T_value for s in traj.steps]
    assert all(b >= a - g.eps_grid for a, b in zip(Ts, Ts[1:]))
    csv = traj.to_csv()
    assert csv.splitlines()[0] == "step,normal_0,normal_1,normal_2,T_value,dist1,dist2"
    assert len(csv.splitlines()) == len(traj.steps) + 1


def test_flow_reproducible():
    A, B = random_set(0.4, 1, G2), random_set(0.6, 2, G2)
    t1 = converge_to_caps(A, B, seed=9, max_steps=60)
    t2 = converge_to_caps(A, B, seed=9, max_steps=60)
    assert t1.to_csv() == t2.to_csv()


def test_flow_reports_nonconvergence():
    A, B = random_set(0.4, 1, G2), random_set(0.6, 2, G2)
    traj = converge_to_caps(A, B, max_steps=1, target=1e-9)
    assert not traj.converged


def _offcentre_pair(g, angle=0.6):
    p = tilt_rotation([angle, 0.0]) @ north_pole(2)
    A = rasterize_cap(Cap.with_measure(Point(p), 0.25), g)
    B = rasterize_cap(Cap.with_measure(Point(p), 0.4), g)
    return A, B, Hyperplane.from_vector(north_pole(2) - p)


def test_land_in_band_vacuous():
    A, B, H0 = _offcentre_pair(G2)
    res = land_in_band(A, B, H0, (0.0, 1.0))
    assert res.hyperplane is H0 and res.t == 0.0


def _mirrored_pair(g):
    # caps at mirror images across x = 0: polarizing there makes them concentric,
    # while the plane z = 0 leaves both untouched
    p = tilt_rotation([0.5, 0.0]) @ north_pole(2)
    q = p * np.array([-1.0, 1.0, 1.0])
    A = rasterize_cap(Cap.with_measure(Point(p), 0.05), g)
    B = rasterize_cap(Cap.with_measure(Point(q), 0.08), g)
    return A, B, Hyperplane(np.array([1.0, 0.0, 0.0]))


def test_land_in_band_constructed():
    g = Grid.sphere(64, 64)
    A, B, H0 = _mirrored_pair(g)
    assert dist_to_orbit(*(polarize(E, H0) for E in (A, B))).value < 0.01
    assert dist_to_orbit(A, B).value > 0.06
    band = (0.03, 0.05)
    res = land_in_band(A, B, H0, band, end_normal=north_pole(2))
    assert band[0] < res.distance < band[1]
    assert 0.0 < res.t < 1.0
    assert dist_to_orbit(*res.sets).value == pytest.approx(res.distance)


def test_land_in_band_no_bracket():
    A, B, H0 = _offcentre_pair(G2)
    with pytest.raises(PreconditionError):
        land_in_band(A, B, H0, (0.97, 0.99), n_sweep=4)
