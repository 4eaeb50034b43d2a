"""Model eigenfunctions: values, norms, restrictions, and scaling fits."""

import math

import numpy as np
import pytest

from eigentubes import eigenmodes as em
from eigentubes import errors, geometry, submanifold
from eigentubes.geometry import CotangentPoint

# reference |P_l(0)| values, cross-checked against an independent
# recurrence implementation
LEGENDRE_AT_ZERO = {
    20: 0.17619705200195315,
    40: 0.12537068761957926,
    100: 0.07958923738717875,
}


def n_l(l):
    return math.sqrt((2 * l + 1) / (4.0 * math.pi))


# -- constructors and guards --------------------------------------------------

def test_spec_constructors_set_scale():
    z = em.zonal(20)
    assert math.isclose(z.h, 1.0 / math.sqrt(20 * 21), rel_tol=1e-15)
    assert z.is_eigenfunction
    t = em.torus_mode((3, 4))
    assert math.isclose(t.h, 1.0 / (10.0 * math.pi), rel_tol=1e-15)
    b = em.euclidean_beam(1e-3)
    assert not b.is_eigenfunction


def test_degree_and_lattice_guards():
    with pytest.raises(errors.InputError):
        em.zonal(0)
    with pytest.raises(errors.OverflowGuardError):
        em.zonal(em.MAX_DEGREE + 1)
    with pytest.raises(errors.InputError):
        em.zonal(5, axis=(0.0, 0.0, 0.0))
    with pytest.raises(errors.InputError):
        em.torus_mode((0, 0))
    with pytest.raises(errors.InputError):
        em.torus_mode((1.5, 2.0))
    for bad_h in (0.0, 0.2, -1e-3):
        with pytest.raises(errors.DomainError):
            em.euclidean_beam(bad_h)


def test_eigen_residual_vanishes_for_modes():
    assert em.eigen_residual(em.torus_mode((3, 4))) < 1e-12
    assert em.eigen_residual(em.zonal(57)) < 1e-12
    assert math.isnan(em.eigen_residual(em.euclidean_beam(1e-3)))


# -- pointwise values ----------------------------------------------------------

def test_zonal_pole_value():
    for l in (1, 20, 113):
        v = em.eval_mode(em.zonal(l), [0.0, 0.0])
        assert math.isclose(v.real, n_l(l), rel_tol=1e-14)
        assert v.imag == 0.0


def test_zonal_respects_axis():
    # tilt the symmetry axis to +y; the new pole sits on the equator
    v = em.eval_mode(em.zonal(31, axis=(0.0, 1.0, 0.0)),
                     [math.pi / 2.0, math.pi / 2.0])
    assert math.isclose(v.real, n_l(31), rel_tol=1e-12)


def test_zonal_equator_values():
    for l, ref in LEGENDRE_AT_ZERO.items():
        v = abs(em.eval_mode(em.zonal(l), [math.pi / 2.0, 0.7]))
        assert math.isclose(v, n_l(l) * ref, rel_tol=1e-12)


def test_zonal_odd_degree_vanishes_on_equator():
    for l in (7, 21, 99):
        assert abs(em.eval_mode(em.zonal(l), [math.pi / 2.0, 0.3])) < 1e-12


def test_highest_weight_concentrates_on_equator():
    spec = em.highest_weight(40)
    pole = abs(em.eval_mode(spec, [0.0, 0.0]))
    eq = abs(em.eval_mode(spec, [math.pi / 2.0, 1.1]))
    mid = abs(em.eval_mode(spec, [math.pi / 4.0, 0.0]))
    assert pole == 0.0
    assert eq > mid > 0.0
    # |u| is constant along the equator
    eq2 = abs(em.eval_mode(spec, [math.pi / 2.0, 2.9]))
    assert math.isclose(eq, eq2, rel_tol=1e-12)


def test_torus_mode_is_unimodular_plane_wave():
    spec = em.torus_mode((2, -1))
    v = em.eval_mode(spec, [0.3, 0.4])
    assert math.isclose(abs(v), 1.0, rel_tol=1e-14)
    expected = np.exp(2j * math.pi * (2 * 0.3 - 0.4))
    assert abs(v - expected) < 1e-14


def test_beam_profile_multiplies():
    base = em.eval_mode(em.euclidean_beam(1e-2), [0.05, 0.02])
    shaped = em.eval_mode(em.euclidean_beam(1e-2, profile=lambda p: p[0]),
                          [0.05, 0.02])
    assert abs(shaped - 0.05 * base) < 1e-12


# -- norms ---------------------------------------------------------------------

def test_mode_l2_norm_closed_forms():
    assert em.mode_l2_norm(em.zonal(20)) == 1.0
    assert em.mode_l2_norm(em.torus_mode((1, 0))) == 1.0
    h = 1e-3
    assert math.isclose(em.mode_l2_norm(em.euclidean_beam(h)),
                        math.sqrt(math.pi) * h ** 0.25, rel_tol=1e-15)
    with pytest.raises(errors.InputError):
        em.mode_l2_norm(em.euclidean_beam(h, profile=lambda p: 1.0))


def test_sphere_mode_l2_quadrature():
    # Gauss-Legendre in the colatitude cosine is exact for these degrees
    for spec in (em.zonal(20), em.highest_weight(15)):
        nodes, wts = np.polynomial.legendre.leggauss(2 * spec.l + 4)
        th = np.arccos(nodes)
        vals = np.abs(em.eval_mode(
            spec, np.stack([th, np.zeros_like(th)], axis=-1), 0)) ** 2
        total = 2.0 * math.pi * float(np.sum(wts * vals))
        assert math.isclose(total, 1.0, rel_tol=1e-11)


def test_random_mode_l2_quadrature():
    l = 6
    spec = em.random_sphere_mode(l, seed=11)
    nodes, wts = np.polynomial.legendre.leggauss(40)
    th = np.arccos(nodes)
    n_phi = 4 * l + 4
    total = 0.0
    for k in range(n_phi):
        ph = 2.0 * math.pi * k / n_phi
        vals = np.abs(em.eval_mode(
            spec, np.stack([th, np.full_like(th, ph)], axis=-1), 0)) ** 2
        total += float(np.sum(wts * vals)) * (2.0 * math.pi / n_phi)
    assert math.isclose(total, 1.0, rel_tol=1e-10)


def test_random_mode_seeded_reproducibly():
    a = em.eval_mode(em.random_sphere_mode(6, seed=11), [0.7, 0.3])
    b = em.eval_mode(em.random_sphere_mode(6, seed=11), [0.7, 0.3])
    c = em.eval_mode(em.random_sphere_mode(6, seed=12), [0.7, 0.3])
    assert a == b
    assert abs(a - c) > 1e-6


# -- sup ratios ------------------------------------------------------------------

def test_sup_ratio_zonal_is_pole_value():
    for l in (1, 20):
        assert math.isclose(em.sup_ratio(em.zonal(l)), n_l(l), rel_tol=1e-12)


def test_sup_ratio_highest_weight_wallis():
    # independent route: |u| on the equator via the Wallis product
    l = 100
    w = 1.0
    for k in range(1, l + 1):
        w *= (2 * k - 1.0) / (2 * k)
    expected = math.sqrt((2 * l + 1) / (4.0 * math.pi) * w)
    assert math.isclose(em.sup_ratio(em.highest_weight(l)), expected,
                        rel_tol=2e-4)


def test_sup_ratio_trivial_kinds():
    assert em.sup_ratio(em.torus_mode((2, 1))) == 1.0
    h = 1e-2
    expected = h ** -0.25 / (math.sqrt(math.pi) * h ** 0.25)
    assert math.isclose(em.sup_ratio(em.euclidean_beam(h)), expected,
                        rel_tol=1e-14)


# -- averages --------------------------------------------------------------------

@pytest.fixture(scope="module")
def horizontal(torus):
    rho = CotangentPoint([0.0, 0.0], [1.0, 0.0], 0)
    return submanifold.closed_geodesic(torus, rho, 1.0, density=256)


def test_average_selects_constant_lattice_mode(torus, horizontal):
    value, err = em.average_over(horizontal, em.torus_mode((0, 7)))
    assert abs(value - 1.0) < 1e-12
    assert err < 1e-12


def test_average_kills_oscillating_lattice_mode(torus, horizontal):
    value, err = em.average_over(horizontal, em.torus_mode((3, 5)))
    assert abs(value) < 1e-10
    assert err < 1e-10


def test_average_over_point_is_evaluation(torus):
    P = submanifold.point(torus, [0.3, 0.4])
    value, err = em.average_over(P, em.torus_mode((2, 1)))
    assert value == em.eval_mode(em.torus_mode((2, 1)), [0.3, 0.4])
    assert err == 0.0


def test_average_flags_unresolved_oscillation(torus):
    rho = CotangentPoint([0.0, 0.0], [1.0, 0.0], 0)
    coarse = submanifold.closed_geodesic(torus, rho, 1.0, density=8)
    with pytest.raises(errors.QuadratureError):
        em.average_over(coarse, em.torus_mode((8, 0)))


def test_average_rejects_bad_refinement(torus, horizontal):
    with pytest.raises(errors.InputError):
        em.average_over(horizontal, em.torus_mode((1, 0)), quad_refine=0)


def test_equator_average_of_zonal_modes(sphere):
    rho = CotangentPoint([math.pi / 2.0, 0.0], [0.0, 1.0], 0)
    eq = submanifold.closed_geodesic(sphere, rho, 2.0 * math.pi, density=64)
    for l, ref in ((20, LEGENDRE_AT_ZERO[20]), (40, LEGENDRE_AT_ZERO[40])):
        value, err = em.average_over(eq, em.zonal(l))
        pred = 2.0 * math.pi * n_l(l) * ref
        assert abs(complex(value) - pred) < 1e-12
    value, _ = em.average_over(eq, em.zonal(7))
    assert abs(complex(value)) < 1e-12


# -- beam restrictions -------------------------------------------------------------

def test_beam_normal_crossing_matches_closed_form():
    for h in (1e-2, 1e-3, 1e-4):
        got = em.beam_restriction(h, math.pi / 2.0)
        target = math.sqrt(2.0 * math.pi) * h ** 0.25
        assert abs(got.real - target) / target < 1e-6
        assert abs(got.imag) < 1e-12 * target
        exact = em.beam_restriction_exact(h, math.pi / 2.0)
        assert math.isclose(abs(exact), target, rel_tol=1e-15)


def test_beam_oblique_crossing_reference_value():
    # pinned against a 40-digit quadrature of the same integral
    target = 0.18697217002923987
    got = em.beam_restriction(0.01, 1.4)
    assert abs(got - target) / target < 1e-9
    exact = em.beam_restriction_exact(0.01, 1.4)
    assert abs(exact - target) / target < 1e-12


def test_beam_diagonal_crossing_is_negligible():
    h = 1e-3
    assert abs(em.beam_restriction(h, math.pi / 4.0)) < h ** 5


def test_beam_restriction_guards():
    with pytest.raises(errors.DomainError):
        em.beam_restriction(0.5, math.pi / 2.0)
    with pytest.raises(errors.DomainError):
        em.beam_restriction(1e-3, -0.1)
    with pytest.raises(errors.DomainError):
        em.beam_restriction(1e-3, 2.0)


# -- scaling fits --------------------------------------------------------------------

def test_scaling_fit_recovers_power_law():
    hs = [10.0 ** (-k / 2.0) for k in range(2, 9)]
    fit = em.scaling_fit([(h, 3.7 * h ** -0.5) for h in hs])
    assert abs(fit.exponent + 0.5) < 1e-12
    assert fit.log_correction == 0.0
    assert fit.residual < 1e-12
    assert fit.model == "PowerLaw"


def test_scaling_fit_recovers_log_correction():
    hs = [10.0 ** (-k / 2.0) for k in range(2, 9)]
    pairs = [(h, 2.0 * h ** 0.25 * math.log(1.0 / h) ** -0.5) for h in hs]
    fit = em.scaling_fit(pairs, "PowerTimesSqrtLog")
    assert abs(fit.exponent - 0.25) < 1e-12
    assert abs(fit.log_correction + 0.5) < 1e-12
    assert fit.residual < 1e-12


def test_scaling_fit_guards():
    with pytest.raises(errors.InputError):
        em.scaling_fit([(1e-1, 1.0), (1e-2, 2.0), (1e-3, 3.0)])
    narrow = [(0.5 - 0.01 * k, 1.0) for k in range(4)]
    with pytest.raises(errors.DomainError):
        em.scaling_fit(narrow)
    spread = [(10.0 ** -k, 1.0 if k else 0.0) for k in range(4)]
    with pytest.raises(errors.DomainError):
        em.scaling_fit(spread)
    with pytest.raises(errors.InputError):
        em.scaling_fit([(10.0 ** -k, 1.0) for k in range(4)], "Cubic")


# -- csv -------------------------------------------------------------------------------

def test_modes_csv_roundtrip(tmp_path):
    rows = [("torus", "0|7", 1e-2, 1.0 + 0.0j, 0.0),
            ("sphere", "20", 4.879e-2, 0.25 - 0.5j, 1e-9)]
    path = tmp_path / "modes.csv"
    em.write_modes_csv(rows, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0].split(",") == em.MODES_COLUMNS
    assert len(lines) == 3
    cells = lines[2].split(",")
    assert cells[0] == "sphere"
    assert math.isclose(float(cells[3]), 0.25, rel_tol=1e-15)
    assert math.isclose(float(cells[5]), abs(0.25 - 0.5j), rel_tol=1e-15)
