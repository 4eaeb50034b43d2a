"""Geodesic flow: closed forms, symplectic structure, and scaling times."""

import math

import numpy as np
import pytest

from eigentubes import flow, geometry, tubes
from eigentubes.errors import DomainError


def unit_point(m, x, xi):
    p = geometry.CotangentPoint(np.array(x, dtype=float), np.array(xi, dtype=float))
    return geometry.CotangentPoint(p.x, p.xi / geometry.conorm(m, p))


def test_flat_torus_straight_line(torus):
    p = geometry.CotangentPoint(np.array([0.1, 0.2]), np.array([0.6, 0.8]))
    st = flow.geodesic_flow(torus, p, 2.5, with_jac=True)
    assert np.allclose(st.p.x, np.mod([0.1 + 1.5, 0.2 + 2.0], 1.0), atol=1e-12)
    assert np.allclose(st.p.xi, [0.6, 0.8], atol=1e-14)
    assert st.jac.shape == (4, 4)
    assert np.linalg.det(st.jac) == pytest.approx(1.0, abs=1e-12)
    assert st.conorm_drift == pytest.approx(0.0, abs=1e-14)


def test_requires_unit_covector(ctorus):
    p = geometry.CotangentPoint(np.array([0.3, 0.7]), np.array([0.6, -0.8]))
    with pytest.raises(DomainError):
        flow.geodesic_flow(ctorus, p, 1.0)


def test_sphere_equator_period(sphere):
    q = geometry.CotangentPoint(np.array([math.pi / 2, 0.0]), np.array([0.0, 1.0]))
    st = flow.geodesic_flow(sphere, q, 1.3)
    assert st.p.x[0] == pytest.approx(math.pi / 2, abs=1e-12)
    assert st.p.x[1] % (2 * math.pi) == pytest.approx(1.3, abs=1e-10)
    full = flow.geodesic_flow(sphere, q, 2 * math.pi)
    v0 = geometry.sphere_embed(q.x, q.chart)
    v1 = geometry.sphere_embed(full.p.x, full.p.chart)
    assert np.allclose(v0, v1, atol=1e-10)


def test_sphere_meridian_through_pole(sphere):
    r = geometry.CotangentPoint(np.array([math.pi / 2, 1.0]), np.array([1.0, 0.0]))
    half = flow.geodesic_flow(sphere, r, math.pi)
    # antipode of the start point
    v0 = geometry.sphere_embed(r.x, r.chart)
    vh = geometry.sphere_embed(half.p.x, half.p.chart)
    assert np.allclose(vh, -v0, atol=1e-10)
    full = flow.geodesic_flow(sphere, r, 2 * math.pi)
    vf = geometry.sphere_embed(full.p.x, full.p.chart)
    assert np.allclose(vf, v0, atol=1e-10)


def test_conformal_flow_symplectic_and_reversible(ctorus):
    p = unit_point(ctorus, [0.3, 0.7], [0.6, -0.8])
    st = flow.geodesic_flow(ctorus, p, 3.0, with_jac=True)
    assert np.linalg.det(st.jac) == pytest.approx(1.0, abs=1e-10)
    assert st.conorm_drift < 1e-8
    back = flow.geodesic_flow(ctorus, st.p, -3.0)
    d = geometry.phase_delta(
        ctorus,
        np.concatenate([back.p.x, back.p.xi]),
        np.concatenate([p.x, p.xi]))
    assert np.max(np.abs(d)) < 1e-7


def test_conformal_horizon_endgame_terminates(ctorus):
    # regression: the clamped final step used to stall below one ulp of t
    p = unit_point(ctorus, [0.3, 0.7], [0.6, -0.8])
    st = flow.geodesic_flow(ctorus, p, 1.5)
    assert st.n_steps < 100000
    st2 = flow.geodesic_flow(ctorus, p, 5.0)
    assert st2.n_steps < 300000


def test_conformal_small_amplitude_matches_flat(torus):
    tiny = geometry.conformal_torus(1e-8, 1)
    p = unit_point(tiny, [0.3, 0.7], [0.6, -0.8])
    sA = flow.geodesic_flow(tiny, p, 5.0)
    q = geometry.CotangentPoint(np.array([0.3, 0.7]), np.array([0.6, -0.8]))
    sB = flow.geodesic_flow(torus, q, 5.0)
    d = geometry.phase_delta(
        torus,
        np.concatenate([sA.p.x, sA.p.xi]),
        np.concatenate([sB.p.x, sB.p.xi]))
    assert np.max(np.abs(d)) < 1e-6


def test_tangent_flow_equals_jacobian(ctorus):
    p = unit_point(ctorus, [0.3, 0.7], [0.6, -0.8])
    J = flow.tangent_flow(ctorus, p, 1.5)
    st = flow.geodesic_flow(ctorus, p, 1.5, with_jac=True)
    assert np.allclose(J, st.jac, atol=1e-12)


def test_dense_trajectory_matches_pointwise(ctorus, torus):
    p = unit_point(ctorus, [0.3, 0.7], [0.6, -0.8])
    ts = np.linspace(0.0, 3.0, 7)
    xs, xis, charts = flow.dense_trajectory(ctorus, p, ts)
    assert xs.shape == (7, 2) and xis.shape == (7, 2)
    st = flow.geodesic_flow(ctorus, p, ts[3])
    assert np.allclose(xs[3], np.mod(st.p.x, 1.0), atol=1e-7)
    assert np.allclose(xis[3], st.p.xi, atol=1e-7)
    # flat torus branch
    q = geometry.CotangentPoint(np.array([0.1, 0.2]), np.array([0.6, 0.8]))
    fx, fxi, _ = flow.dense_trajectory(torus, q, ts)
    assert np.allclose(fx[-1], np.mod(q.x + 3.0 * q.xi, 1.0), atol=1e-12)


def test_flow_states_batch_matches_single(torus):
    xs = np.array([[0.3, 0.7], [0.1, 0.2], [0.9, 0.9]])
    xis = np.tile([0.6, 0.8], (3, 1))
    charts = np.zeros(3, dtype=int)
    bx, bxi, bch = flow.flow_states(torus, xs, xis, charts, 0.7)
    for i in range(3):
        p = geometry.CotangentPoint(xs[i], xis[i])
        st = flow.geodesic_flow(torus, p, 0.7)
        assert np.allclose(bx[i], np.mod(st.p.x, 1.0), atol=1e-12)
        assert np.allclose(bxi[i], st.p.xi, atol=1e-12)


def test_scaling_time_values():
    assert flow.ehrenfest_time(math.exp(-4.0), 2.0) == pytest.approx(1.0, abs=1e-15)
    lam = math.log((3 + math.sqrt(5)) / 2)
    assert lam == pytest.approx(0.9624236501192069, abs=1e-15)
    assert flow.ehrenfest_time(1e-3, lam) == pytest.approx(3.588728975086249, rel=1e-12)
    assert flow.ehrenfest_time(1e-3, 0.9624) == pytest.approx(3.5888171648909686, rel=1e-12)
    # halving the rate doubles the time
    assert flow.ehrenfest_time(1e-2, 0.5) == pytest.approx(2 * flow.ehrenfest_time(1e-2, 1.0), rel=1e-12)
    with pytest.raises(DomainError):
        flow.ehrenfest_time(2.0, 1.0)
    with pytest.raises(DomainError):
        flow.ehrenfest_time(1e-3, 0.0)


def test_expansion_rate_of_linear_toy_map():
    toy = tubes.HyperbolicToyMap(np.array([[2, 1], [1, 1]]))
    rate = flow.max_expansion_rate(toy)
    assert rate == pytest.approx(0.9624236501192069, abs=1e-12)


def test_expansion_rate_positive_on_manifolds(torus, sphere):
    # finite-horizon estimates; integrable flows still show polynomial growth
    r1 = flow.max_expansion_rate(torus, sample_count=6, T_max=3.0)
    r2 = flow.max_expansion_rate(sphere, sample_count=6, T_max=3.0)
    assert r1 > 0.0 and r2 > 0.0


def test_phase_speed_bound(torus, sphere, ctorus):
    assert flow.phase_speed_bound(torus) == pytest.approx(1.0)
    assert flow.phase_speed_bound(sphere) >= 1.0
    # conformal factor bounds the maximal coordinate speed
    assert flow.phase_speed_bound(ctorus) >= math.exp(0.1)
