import time

import numpy as np
import pytest

from sddestab import dde, spectral
from sddestab.corpus import lambert_alpha0
from sddestab.model import SddeSystem

LAMBERT = complex(-0.318131505204764, 1.337235701430689)  # principal solution of l e^l = -1


def pure_delay():
    return SddeSystem.build(np.zeros((2, 2)), B=np.diag([-1.0, -1.0]))


@pytest.mark.parametrize("A,B,want", [
    (np.diag([-1.0, -2.0]), None, (3, 2, 0, 0, 0)),
    (np.zeros((2, 2)), np.eye(2), (0, 0, -2, 0, 1)),
    (np.array([[0.0, 1.0], [-1.0, 0.0]]), None, (0, 1, 0, 0, 0)),
])
def test_char_coefficients(A, B, want):
    c = spectral.char_coefficients(SddeSystem.build(A, B=B))
    assert (c.a, c.b, c.c, c.d, c.r) == want


def test_h_values():
    s = SddeSystem.build(np.diag([-1.0, -2.0]))
    assert abs(spectral.eval_h(s, -1.0)) < 1e-15
    assert abs(spectral.eval_h(s, 0.0) - 2.0) < 1e-15
    assert abs(spectral.eval_h(pure_delay(), LAMBERT)) < 1e-4
    assert abs(lambert_alpha0() - LAMBERT.real) < 1e-12


def test_expansion_matches_determinant():
    rng = np.random.default_rng(5)
    for _ in range(5):
        s = SddeSystem.build(rng.normal(size=(2, 2)), B=rng.normal(size=(2, 2)))
        lam = rng.uniform(-3, 3, 100) + 1j * rng.uniform(-20, 20, 100)
        d = spectral.eval_h(s, lam)
        e = spectral.eval_h_expansion(s, lam)
        mag = np.abs(lam) ** 2 + np.abs(np.exp(-lam)) * (1 + np.abs(lam)) + np.abs(np.exp(-2 * lam)) + 1
        assert np.max(np.abs(d - e) / mag) < 1e-12


def test_analytic_derivative():
    s = SddeSystem.build(np.array([[-1.0, 0.5], [0.2, -2.0]]), B=np.array([[0.3, -0.4], [0.1, 0.5]]))
    lam = np.array([0.3 + 1.2j, -1.5 + 4j])
    h = 1e-6
    fd = (spectral.eval_h(s, lam + h) - spectral.eval_h(s, lam - h)) / (2 * h)
    assert np.allclose(spectral.eval_h_derivative(s, lam), fd, rtol=1e-7)
    assert np.allclose(spectral.char_coefficients(s).derivative(lam), fd, rtol=1e-7)


@pytest.mark.parametrize("A,B,want,tol", [
    (np.diag([-1.0, -2.0]), None, -1.0, 1e-9),
    (np.diag([1.0, -2.0]), None, 1.0, 1e-9),
    (np.zeros((2, 2)), np.diag([-1.0, -1.0]), LAMBERT.real, 1e-6),
])
def test_alpha0_examples(A, B, want, tol):
    t0 = time.perf_counter()
    summ = spectral.spectral_summary(SddeSystem.build(A, B=B))
    assert abs(summ.alpha0 - want) < tol
    assert time.perf_counter() - t0 < 5


def test_lambert_double_root():
    summ = spectral.spectral_summary(pure_delay())
    r = summ.rightmost
    assert abs(abs(r.value.imag) - LAMBERT.imag) < 1e-6
    assert r.multiplicity == 2


def test_no_delay_systems_match_eigenvalues():
    rng = np.random.default_rng(8)
    for n in (1, 2, 3):
        for _ in range(3):
            A = rng.normal(size=(n, n))
            summ = spectral.spectral_summary(SddeSystem.build(A))
            assert abs(summ.alpha0 - np.linalg.eigvals(A).real.max()) < 1e-9


def test_seed_independence():
    s = SddeSystem.build(np.array([[-1.0, 0.5], [0.2, -2.0]]), B=np.array([[0.3, -0.4], [0.1, 0.5]]))
    a = spectral.spectral_summary(s, seed=0)
    b = spectral.spectral_summary(s, seed=12345)
    assert abs(a.alpha0 - b.alpha0) <= 2 * max(a.confidence_radius, b.confidence_radius) + 1e-12


def test_winding_counts_sub_rectangles():
    s = SddeSystem.build(np.array([[-1.0, 0.5], [0.2, -2.0]]), B=np.array([[0.3, -0.4], [0.1, 0.5]]))
    summ = spectral.spectral_summary(s, full=True)
    f = lambda z: spectral.eval_h(s, z)  # noqa: E731
    rng = np.random.default_rng(2)
    roots = [r.value for r in summ.roots for _ in range(r.multiplicity)]
    for _ in range(8):
        x0, x1 = np.sort(rng.uniform(-5, 1, 2))
        y0, y1 = np.sort(rng.uniform(-20, 20, 2))
        near = [z for z in roots if min(abs(z.real - x0), abs(z.real - x1), abs(z.imag - y0), abs(z.imag - y1)) < 1e-3]
        if near:
            continue
        count = sum(x0 < z.real < x1 and y0 < z.imag < y1 for z in roots)
        assert spectral.winding_number(f, x0, x1, y0, y1) == count


def test_no_roots_outcome():
    summ = spectral.rightmost_root(lambda z: np.ones_like(np.asarray(z, dtype=complex)),
                                   spectral.ScanRegion(-1.0, 1.0, 1.0))
    assert summ.no_roots and summ.alpha0 == -np.inf


def test_sign_matches_solution_growth():
    for A, B in ((np.array([[-0.5, 1.0], [0.0, -1.0]]), np.diag([0.2, 0.4])),
                 (np.array([[0.1, 0.0], [0.5, -1.0]]), np.array([[0.1, 0.2], [0.0, 0.1]]))):
        s = SddeSystem.build(A, B=B)
        a0 = spectral.spectral_summary(s).alpha0
        g = dde.fundamental_matrix(s, 1 / 64, 40.0)
        sel = g.times >= 10
        slope = np.polyfit(g.times[sel], np.log(g.norms()[sel]), 1)[0]
        assert abs(slope - a0) < 0.1


def test_assumption_h_examples():
    D = SddeSystem.decoupled
    rep = spectral.check_assumption_h(D(np.diag([-1.0, -2.0]), mu=(1.0, 1.0)))
    assert not rep.holds
    rep = spectral.check_assumption_h(D(np.diag([-1.0, -2.0])))
    assert rep.holds
    rep = spectral.check_assumption_h(D(np.diag([-1.0, -2.0]), sigma=[[1.0, 0.0], [0.0, 0.0]]))
    assert rep.holds and abs(rep.witness[0] + 2.0) < 1e-9
    assert np.allclose(np.abs(rep.witness[1]), [0.0, 1.0])
    rep = spectral.check_assumption_h(D(np.diag([-1.0, -2.0]), sigma=[[1.0, 0.0], [0.0, 0.5]]))
    assert not rep.holds
