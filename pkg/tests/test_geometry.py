"""Metric data, charts, and distances on the three model surfaces.

Christoffel symbols and curvature are checked against central finite
differences of the metric itself, so the closed forms in the module are
never used as their own oracle.
"""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eigentubes import geometry
from eigentubes.errors import ChartDomainError, InputError


def fd_metric_derivs(m, x, chart, eps=1e-6):
    # dg[j][l,k] = d g_{lk} / d x_j by central differences
    dg = []
    for j in range(2):
        xp = np.array(x, dtype=float)
        xm = np.array(x, dtype=float)
        xp[j] += eps
        xm[j] -= eps
        gp = geometry.metric_at(m, xp, chart).g
        gm = geometry.metric_at(m, xm, chart).g
        dg.append((gp - gm) / (2 * eps))
    return dg


def christoffel_from_fd(m, x, chart):
    data = geometry.metric_at(m, x, chart)
    dg = fd_metric_derivs(m, x, chart)
    gamma = np.zeros((2, 2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                s = 0.0
                for l in range(2):
                    s += data.g_inv[i, l] * (dg[j][l, k] + dg[k][l, j] - dg[l][j, k])
                gamma[i, j, k] = 0.5 * s
    return gamma


@pytest.mark.parametrize("x", [(0.13, 0.71), (0.5, 0.25), (0.9, 0.02)])
def test_flat_torus_metric_is_identity(torus, x):
    data = geometry.metric_at(torus, np.array(x))
    assert np.allclose(data.g, np.eye(2))
    assert np.allclose(data.g_inv, np.eye(2))
    assert np.allclose(data.christoffel, 0.0)
    assert data.sqrt_det == pytest.approx(1.0)


@pytest.mark.parametrize("x", [(0.7, 1.3), (1.2, 0.4), (2.0, 5.0)])
def test_sphere_christoffel_matches_finite_differences(sphere, x):
    data = geometry.metric_at(sphere, np.array(x))
    fd = christoffel_from_fd(sphere, x, 0)
    assert np.allclose(data.christoffel, fd, atol=1e-7)


@pytest.mark.parametrize("x", [(0.0, 0.0), (0.31, 0.6), (0.77, 0.12)])
def test_conformal_christoffel_matches_finite_differences(ctorus, x):
    data = geometry.metric_at(ctorus, np.array(x))
    fd = christoffel_from_fd(ctorus, x, 0)
    assert np.allclose(data.christoffel, fd, atol=1e-6)


def test_sphere_pole_chart_raises(sphere):
    with pytest.raises(ChartDomainError):
        geometry.metric_at(sphere, np.array([0.0, 0.3]))


def test_gauss_curvature_constants(torus, sphere):
    assert geometry.gauss_curvature(torus, np.array([0.4, 0.9])) == pytest.approx(0.0)
    for theta in (0.3, 1.1, 2.5):
        k = geometry.gauss_curvature(sphere, np.array([theta, 0.7]))
        assert k == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("x1", [0.0, 0.17, 0.25, 0.62])
def test_conformal_curvature_against_potential_differences(ctorus, x1):
    # K = -exp(-2f) f'' for a conformal factor depending on x1 only
    eps = 1e-5
    f0 = geometry.conformal_potential(ctorus, x1)
    fpp = (geometry.conformal_potential(ctorus, x1 + eps)
           - 2 * f0
           + geometry.conformal_potential(ctorus, x1 - eps)) / eps**2
    expect = -math.exp(-2 * f0) * fpp
    got = geometry.gauss_curvature(ctorus, np.array([x1, 0.44]))
    assert got == pytest.approx(expect, abs=1e-4)


def test_conformal_potential_derivatives_match_differences(ctorus):
    eps = 1e-6
    for x1 in (0.08, 0.33, 0.5):
        d1_fd = (geometry.conformal_potential(ctorus, x1 + eps)
                 - geometry.conformal_potential(ctorus, x1 - eps)) / (2 * eps)
        assert geometry.conformal_potential_d1(ctorus, x1) == pytest.approx(d1_fd, abs=1e-7)
        d2_fd = (geometry.conformal_potential_d1(ctorus, x1 + eps)
                 - geometry.conformal_potential_d1(ctorus, x1 - eps)) / (2 * eps)
        assert geometry.conformal_potential_d2(ctorus, x1) == pytest.approx(d2_fd, abs=1e-6)


def test_conformal_conorm_at_origin(ctorus):
    # amplitude 0.1, frequency 1: |xi|_g = exp(-f(0)) at the potential peak
    p = geometry.CotangentPoint(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    assert geometry.conorm(ctorus, p) == pytest.approx(math.exp(-0.1), rel=1e-12)


def test_cotangent_point_validation():
    with pytest.raises(InputError):
        geometry.CotangentPoint(np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.0]))
    with pytest.raises(InputError):
        geometry.CotangentPoint(np.array([0.0, 0.0]), np.array([1.0]))
    with pytest.raises(InputError):
        geometry.CotangentPoint(np.array([0.0, 0.0]), np.array([1.0, 0.0]), chart=2)


def test_cotangent_copy_is_independent(torus):
    p = geometry.CotangentPoint(np.array([0.1, 0.2]), np.array([0.5, 0.5]))
    q = p.copy()
    q.x[0] = 0.9
    assert p.x[0] == pytest.approx(0.1)


@given(alpha=st.floats(min_value=-3.0, max_value=3.0),
       x1=st.floats(min_value=0.0, max_value=0.999),
       x2=st.floats(min_value=0.0, max_value=0.999))
def test_angle_covector_roundtrip_flat(alpha, x1, x2):
    m = geometry.flat_torus()
    x = np.array([x1, x2])
    xi = geometry.covector_from_angle(m, x, alpha)
    p = geometry.CotangentPoint(x, xi)
    assert geometry.conorm(m, p) == pytest.approx(1.0, abs=1e-12)
    back = geometry.angle_from_covector(m, p)
    assert math.cos(back - alpha) == pytest.approx(1.0, abs=1e-9)


@given(alpha=st.floats(min_value=-3.0, max_value=3.0),
       theta=st.floats(min_value=0.3, max_value=2.8),
       phi=st.floats(min_value=0.0, max_value=6.0))
def test_angle_covector_roundtrip_sphere(alpha, theta, phi):
    m = geometry.sphere()
    x = np.array([theta, phi])
    xi = geometry.covector_from_angle(m, x, alpha)
    p = geometry.CotangentPoint(x, xi)
    assert geometry.conorm(m, p) == pytest.approx(1.0, abs=1e-10)
    back = geometry.angle_from_covector(m, p)
    assert math.cos(back - alpha) == pytest.approx(1.0, abs=1e-8)


def test_normalize_point_wraps_torus_coordinates(ctorus):
    p = geometry.CotangentPoint(np.array([1.2, -0.4]), np.array([3.0, -4.0]))
    q = geometry.normalize_point(ctorus, p)
    assert np.allclose(q.x, [0.2, 0.6])
    assert np.allclose(q.xi, p.xi)
    assert geometry.conorm(ctorus, q) == pytest.approx(geometry.conorm(ctorus, p), rel=1e-12)


def test_sphere_embedding_roundtrip(sphere):
    for chart in (0, 1):
        for theta, phi in [(0.4, 1.2), (1.5707, 3.0), (2.8, 5.9)]:
            v = geometry.sphere_embed(np.array([theta, phi]), chart)
            assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
            x = geometry.sphere_unembed(v, chart)
            w = geometry.sphere_embed(x, chart)
            assert np.allclose(v, w, atol=1e-10)


def test_sphere_chart_switch_preserves_norm_and_position(sphere):
    x = np.array([0.9, 2.1])
    p = geometry.CotangentPoint(x, geometry.covector_from_angle(sphere, x, 0.7), chart=0)
    q = geometry.switch_chart(sphere, p)
    assert q.chart == 1
    assert geometry.conorm(sphere, q) == pytest.approx(1.0, abs=1e-10)
    v0 = geometry.sphere_embed(p.x, p.chart)
    v1 = geometry.sphere_embed(q.x, q.chart)
    assert np.allclose(v0, v1, atol=1e-10)
    r = geometry.switch_chart(sphere, q)
    assert r.chart == 0
    assert np.allclose(geometry.sphere_embed(r.x, 0), v0, atol=1e-10)


def test_torus_distance_wraps(torus):
    d = geometry.distance(torus, np.array([0.1, 0.2]), np.array([0.9, 0.2]))
    assert d == pytest.approx(0.2, abs=1e-9)
    d2 = geometry.distance(torus, np.array([0.05, 0.95]), np.array([0.95, 0.05]))
    assert d2 == pytest.approx(math.hypot(0.1, 0.1), abs=1e-9)


def test_sphere_distance_matches_arc_length(sphere):
    # oracle: arccos of the dot product of the unit embeddings
    pairs = [((0.5, 0.3), (1.2, 1.0)), ((1.4, 0.0), (1.4, 3.0)), ((0.7, 2.0), (2.6, 5.5))]
    for a, b in pairs:
        va = geometry.sphere_embed(np.array(a), 0)
        vb = geometry.sphere_embed(np.array(b), 0)
        expect = math.acos(min(1.0, max(-1.0, float(va @ vb))))
        got = geometry.distance(sphere, np.array(a), np.array(b))
        assert got == pytest.approx(expect, abs=1e-6)


def test_phase_delta_wraps_on_torus(torus):
    u = np.array([0.02, 0.5, 1.0, 0.0])
    v = np.array([0.98, 0.5, 1.0, 0.0])
    d = geometry.phase_delta(torus, u, v)
    assert abs(d[0]) == pytest.approx(0.04, abs=1e-12)


def test_phase_distance_symmetric(ctorus):
    p = geometry.CotangentPoint(np.array([0.1, 0.9]), np.array([1.0, 0.2]))
    q = geometry.CotangentPoint(np.array([0.8, 0.1]), np.array([0.9, -0.3]))
    assert geometry.phase_distance(ctorus, p, q) == pytest.approx(
        geometry.phase_distance(ctorus, q, p), rel=1e-12)
    assert geometry.phase_distance(ctorus, p, p) == pytest.approx(0.0, abs=1e-12)
