import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sphere_symm.errors import PreconditionError
from sphere_symm.harmonics import (BoundaryFunction, Q_form, associated_function, balance, eigenvalue,
                                   project, spectral_bound, spectral_check, u_star)
from sphere_symm.set_model import Grid, north_cap
from sphere_symm.sphere_core import classify_triple, tilt_rotation, weight

HEMI = classify_triple(0.5, 0.5, 0.0, 2)
FROZEN = classify_triple(0.3, 0.6, 0.2, 2)
M = 128


def _random_function(seed, m=M, top=20):
    rng = np.random.default_rng(seed)
    phi = (np.arange(m) + 0.5) * 2 * math.pi / m
    v = sum(rng.normal() * np.cos(n * phi) + rng.normal() * np.sin(n * phi) for n in range(top))
    return BoundaryFunction(2, v)


def test_associated_function_examples():
    g = Grid.sphere(64, 64)
    B = north_cap(g, FROZEN.h1)
    F, Fp, Fm = associated_function(B, FROZEN, 1)
    assert not F.values.any() and not Fp.values.any() and not Fm.values.any()
    # one extra ring just below the boundary
    k = int(np.searchsorted(g.ring_heights, FROZEN.h1)) - 1
    lowered = north_cap(g, g.ring_heights[k] - 1e-9)
    F, Fp, Fm = associated_function(lowered, FROZEN, 1)
    assert np.allclose(F.values, weight(FROZEN.h1, 2) * 2.0 / g.n_t)
    assert not Fm.values.any()


def test_associated_function_mean_zero_at_equal_measure():
    g = Grid.sphere(64, 64)
    B = north_cap(g, FROZEN.h1)
    E = B.transported(tilt_rotation([0.2, 0.1]))
    if E.count == B.count:
        F, _, _ = associated_function(E, FROZEN, 1)
        assert abs(F.mean()) < 1e-15


def test_project_examples():
    const = BoundaryFunction(2, np.full(M, 3.0))
    assert project(const, 0).values == pytest.approx(const.values)
    assert np.allclose(project(const, 2).values, 0.0)
    c3 = BoundaryFunction.harmonic(2, M, 3)
    assert np.allclose(project(c3, 3).values, c3.values, atol=1e-12)
    for n in (0, 1, 2, 4, 7):
        assert np.allclose(project(c3, n).values, 0.0, atol=1e-12)


def test_project_circle_boundary():
    F = BoundaryFunction(1, [0.3, 1.1])
    assert project(F, 0).values == pytest.approx([0.7, 0.7])
    assert project(F, 1).values == pytest.approx([-0.4, 0.4])
    assert not project(F, 2).values.any()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_parseval(seed):
    rng = np.random.default_rng(seed)
    F = BoundaryFunction(2, rng.normal(size=64))
    total = sum(project(F, n).norm() ** 2 for n in range(33))
    assert total == pytest.approx(F.norm() ** 2, abs=1e-10)


def test_Q_form_examples():
    zero = BoundaryFunction(2, np.zeros(M))
    assert Q_form(zero, _random_function(1), FROZEN) == 0.0
    one = BoundaryFunction(2, np.ones(M))
    assert Q_form(one, one, FROZEN) == pytest.approx(eigenvalue(0, FROZEN), abs=1e-12)
    c = BoundaryFunction(2, np.cos((np.arange(M) + 0.5) * 2 * math.pi / M))
    assert Q_form(c, c, HEMI) == pytest.approx(0.5 / math.pi, abs=1e-12)


def test_hemisphere_eigenvalues():
    assert eigenvalue(0, HEMI) == pytest.approx(0.5)
    assert eigenvalue(1, HEMI) == pytest.approx(1 / math.pi, abs=1e-15)
    assert eigenvalue(2, HEMI) == pytest.approx(0.0, abs=1e-15)
    assert eigenvalue(3, HEMI) == pytest.approx(-1 / (3 * math.pi), abs=1e-15)


@pytest.mark.parametrize("triple", [HEMI, FROZEN, classify_triple(0.2, 0.45, -0.3, 2)], ids=["hemi", "frozen", "other"])
def test_funk_hecke_consistency(triple):
    for n in range(17):
        Y = BoundaryFunction.harmonic(2, M, n)
        assert Q_form(Y, Y, triple) == pytest.approx(eigenvalue(n, triple), abs=1e-6)
        assert abs(eigenvalue(n, triple)) <= (1 / (n * math.pi) if n else 1.0) + 1e-15


def test_diagonalization():
    for m in range(6):
        for n in range(6):
            if m != n:
                a = BoundaryFunction.harmonic(2, M, m, phase=0.3)
                b = BoundaryFunction.harmonic(2, M, n, phase=1.1)
                assert abs(Q_form(a, b, FROZEN)) < 1e-12


def test_Q_form_spectral_decomposition():
    F, G = _random_function(3), _random_function(4)
    expected = sum(eigenvalue(n, FROZEN) * project(F, n).inner(project(G, n)) for n in range(M // 2 + 1))
    assert Q_form(F, G, FROZEN) == pytest.approx(expected, abs=1e-12)


def test_degenerate_eigenvalues():
    # r3 >= r1 + r2: u_star <= -1 and the kernel is identically one
    tr = classify_triple(0.05, 0.05, -0.5, 2, with_slopes=False)
    assert u_star(tr) <= -1
    assert eigenvalue(0, tr) == 1.0 and eigenvalue(3, tr) == 0.0
    # r3 <= |r1 - r2|: u_star >= 1 and the kernel vanishes
    tr = classify_triple(0.1, 0.6, 0.9, 2, with_slopes=False)
    assert u_star(tr) >= 1
    assert all(eigenvalue(n, tr) == 0.0 for n in range(5))


def test_circle_boundary_eigenvalues():
    tr = classify_triple(0.3, 0.6, 0.2, 1)
    assert eigenvalue(0, tr) == eigenvalue(1, tr) == 0.5
    assert eigenvalue(2, tr) == 0.0
    F = BoundaryFunction(1, [-1.0, 1.0])
    assert Q_form(F, F, tr) == pytest.approx(eigenvalue(1, tr))


def test_spectral_check_hemisphere():
    rep = spectral_check(HEMI, n_max=64)
    assert rep.bound == pytest.approx(1 / math.pi, abs=1e-9)
    assert rep.saturation_n1 == pytest.approx(1.0, abs=1e-9)
    assert rep.verdicts[0] is False
    assert all(rep.verdicts[1:])
    assert not rep.passed
    d = rep.to_dict()
    assert d["kind"] == "spectrum" and len(d["lambda"]) == 65


def test_spectral_check_frozen_passes_beyond_one():
    rep = spectral_check(FROZEN, n_max=32)
    assert rep.bound == pytest.approx(spectral_bound(FROZEN))
    assert all(rep.verdicts[1:])


def test_spectral_check_rejects_non_strict():
    with pytest.raises(PreconditionError):
        spectral_check(classify_triple(0.01, 0.01, 0.0, 2))


def test_balance_identity_on_cap():
    g = Grid.sphere(64, 64)
    res = balance(north_cap(g, FROZEN.h1), FROZEN)
    assert np.all(res.angles == 0.0) and res.iterations == 0


def test_balance_undoes_small_tilt():
    g = Grid.sphere(128, 4096)
    s = 0.05
    E = north_cap(g, FROZEN.h1).transported(tilt_rotation([s, 0.0]))
    res = balance(E, FROZEN)
    assert abs(res.angles[0] + s) <= 2e-3 * s
    assert abs(res.angles[1]) <= 2e-3 * s
    assert res.first_moment <= 1e-6 * res.f_norm


def test_rotation_identity():
    # rigid rotation: Q(pi1 F1, pi1 F2) equals the quadratic coefficient term at order s^2
    g = Grid.sphere(256, 2048)
    tr = FROZEN
    s = 0.04
    R = tilt_rotation([s, 0.0])
    F1 = project(associated_function(north_cap(g, tr.h1).transported(R), tr, 1)[0], 1)
    F2 = project(associated_function(north_cap(g, tr.h2).transported(R), tr, 2)[0], 1)
    lhs = Q_form(F1, F2, tr)
    rhs = 0.5 * sum(gm / weight(h, 2) * F.norm() ** 2 for gm, h, F in ((tr.gamma1, tr.h1, F1), (tr.gamma2, tr.h2, F2)))
    assert lhs == pytest.approx(rhs, rel=0.03)
