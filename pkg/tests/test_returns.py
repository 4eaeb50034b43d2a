"""Return times, conjugate points, and recurrence decompositions.

The flat-torus return tests are checked against a lattice-ray oracle: a
geodesic from a point in direction w approaches the start point within eps
exactly when some nonzero integer vector L lies within distance eps of the
ray {t w}.  Conjugate-point events on the conformal torus are checked against
an independent Jacobi-field integration with scipy's adaptive RK45.
"""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from eigentubes import geometry, returns, submanifold
from eigentubes.errors import CoverError, DomainError


def test_default_prox_tol_floor():
    from eigentubes.flow import FlowConfig
    assert returns.default_prox_tol(FlowConfig()) == pytest.approx(1e-3)
    assert returns.default_prox_tol(FlowConfig(tol=1e-6)) == pytest.approx(1e-3)


def test_equator_first_return_is_pi(sphere):
    eq = submanifold.latitude_circle(sphere, math.pi / 2, density=16)
    prox = 1.5 * math.pi / len(eq.xs)
    for s in submanifold.sample_conormal(eq)[:4]:
        rec = returns.first_return(eq, s.rho, 4.0, prox_tol=prox)
        assert not rec.horizon_exceeded
        assert rec.T_H == pytest.approx(math.pi, abs=1e-6)
        # the return point sits on the equator again
        assert rec.eta.x[0] == pytest.approx(math.pi / 2, abs=1e-6)


def test_sphere_point_loop_fraction(sphere):
    pt = submanifold.point(sphere, [1.1, 0.8], density=12)
    assert returns.loop_fraction(pt, 7.0) == pytest.approx(1.0)
    assert returns.loop_fraction(pt, 3.0) == pytest.approx(0.0)


def test_torus_vertical_circle_returns_at_one(torus):
    H = submanifold.closed_geodesic(
        torus, geometry.CotangentPoint(np.array([0.37, 0.0]), np.array([0.0, 1.0])),
        1.0, density=16)
    recs = returns.all_returns(H, 1.6)
    assert len(recs) > 0
    for rec in recs:
        assert not rec.horizon_exceeded
        assert rec.T_H == pytest.approx(1.0, abs=1e-6)


def lattice_ray_approach(omega, t_max, t_arm=0.2):
    """Min distance from {t*omega : t in [t_arm, t_max]} to Z^2 \\ {0}, and its time."""
    best = (np.inf, None)
    rng = int(math.ceil(t_max)) + 1
    for p in range(-rng, rng + 1):
        for q in range(-rng, rng + 1):
            if p == 0 and q == 0:
                continue
            L = np.array([p, q], dtype=float)
            t_star = float(L @ omega)
            t_star = min(max(t_star, t_arm), t_max)
            d = float(np.linalg.norm(t_star * omega - L))
            if d < best[0]:
                best = (d, t_star)
    return best


def test_torus_point_returns_match_lattice_oracle(torus):
    prox = 0.05
    pt = submanifold.point(torus, [0.3, 0.4], density=10)
    samples = submanifold.sample_conormal(pt)
    # direction spacing must exceed the proximity gate so a crossing can only
    # match its own seed direction
    assert 2 * math.pi / len(samples) > prox
    recs = returns.all_returns(pt, 3.0, prox_tol=prox)
    assert len(recs) == len(samples)
    checked_hits = 0
    checked_misses = 0
    for rec in recs:
        omega = samples[rec.sample_index].rho.xi
        d, t_star = lattice_ray_approach(omega, 3.0)
        if 0.8 * prox < d < 1.2 * prox or t_star > 2.8:
            continue  # borderline capture or horizon edge
        if d < 0.8 * prox:
            assert not rec.horizon_exceeded, f"oracle hit at d={d:.4f} missed"
            assert rec.T_H == pytest.approx(t_star, abs=2 * prox)
            checked_hits += 1
        else:
            assert rec.horizon_exceeded, f"oracle miss at d={d:.4f} reported"
            checked_misses += 1
    assert checked_hits >= 4
    assert checked_misses >= 20


def test_sphere_conjugate_events_at_multiples_of_pi(sphere):
    x0 = np.array([1.1, 0.8])
    rho = geometry.CotangentPoint(x0, geometry.covector_from_angle(sphere, x0, 0.35))
    rep = returns.conjugate_points(sphere, rho, t_range=(0.0, 10.0))
    assert len(rep.events) == 3
    for i, (t, mult) in enumerate(rep.events):
        assert t == pytest.approx((i + 1) * math.pi, abs=1e-6)
        assert mult == 1


def test_flat_torus_has_no_conjugate_points(torus):
    rho = geometry.CotangentPoint(np.array([0.3, 0.4]), np.array([0.6, 0.8]))
    rep = returns.conjugate_points(torus, rho, t_range=(0.0, 20.0))
    assert rep.events == []


def test_conformal_vertical_geodesic_closed_form(ctorus):
    # the vertical geodesic through the potential peak stays at x1 = 0 where
    # the curvature is the constant K = 0.1 (2 pi)^2 exp(-0.2); conjugate
    # times are m pi / sqrt(K)
    K = 0.1 * (2 * math.pi) ** 2 * math.exp(-0.2)
    xi0 = np.array([0.0, math.exp(0.1)])
    rho = geometry.CotangentPoint(np.array([0.0, 0.0]), xi0)
    assert geometry.conorm(ctorus, rho) == pytest.approx(1.0, abs=1e-12)
    rep = returns.conjugate_points(ctorus, rho, t_range=(0.0, 8.0))
    expect = [m * math.pi / math.sqrt(K) for m in range(1, 5)]
    assert len(rep.events) == len(expect)
    for (t, mult), te in zip(rep.events, expect):
        assert t == pytest.approx(te, abs=1e-3)
        assert mult == 1


def jacobi_events_rk45(amplitude, freq, x0, xi0, t_max):
    """Independent conjugate-point times: geodesic + scalar Jacobi field."""
    w = 2 * math.pi * freq

    def rhs(t, y):
        x1, x2, k1, k2, J, dJ = y
        f = amplitude * math.cos(w * x1)
        e2 = math.exp(-2 * f)
        df = -amplitude * w * math.sin(w * x1)
        ddf = -amplitude * w * w * math.cos(w * x1)
        n2 = k1 * k1 + k2 * k2
        K = -math.exp(-2 * f) * ddf
        return [e2 * k1, e2 * k2, df * e2 * n2, 0.0, dJ, -K * J]

    y0 = [x0[0], x0[1], xi0[0], xi0[1], 0.0, 1.0]
    sol = solve_ivp(rhs, (0.0, t_max), y0, rtol=1e-10, atol=1e-12,
                    dense_output=True, max_step=0.05)
    ts = np.linspace(1e-3, t_max, 4000)
    J = sol.sol(ts)[4]
    events = []
    for i in range(len(ts) - 1):
        if J[i] == 0.0 or J[i] * J[i + 1] < 0.0:
            events.append(brentq(lambda t: sol.sol(t)[4], ts[i], ts[i + 1]))
    return events


def test_conformal_conjugate_points_match_independent_integration(ctorus):
    ang = 3 * math.pi / 8
    xi0 = math.exp(0.1) * np.array([math.cos(ang), math.sin(ang)])
    x0 = np.array([0.0, 0.0])
    rho = geometry.CotangentPoint(x0, xi0)
    assert geometry.conorm(ctorus, rho) == pytest.approx(1.0, abs=1e-12)
    rep = returns.conjugate_points(ctorus, rho, t_range=(0.0, 8.0))
    oracle = jacobi_events_rk45(0.1, 1, x0, xi0, 8.0)
    assert len(rep.events) == len(oracle) > 0
    for (t, _), te in zip(rep.events, oracle):
        assert t == pytest.approx(te, abs=1e-3)


def test_sphere_certificate_fails_with_loop_witness(sphere):
    x0 = np.array([1.1, 0.8])
    cert = returns.conjugacy_certificate(sphere, [(x0, 0)], 5.0, 1.0, n_directions=8)
    assert not cert.holds
    assert len(cert.witnesses) > 0
    assert min(abs(w[3] - 2 * math.pi) for w in cert.witnesses) < 1e-2


def test_flat_torus_certificate_holds(torus):
    cert = returns.conjugacy_certificate(
        torus, [(np.array([0.2, 0.3]), 0)], 5.0, 1.0, n_directions=8)
    assert cert.holds
    assert cert.witnesses == []


def direction_ball_cover(m, base, n_balls):
    radius = 2 * math.sin(math.pi / (2 * n_balls)) * (1 + 1e-3)
    cover = []
    for i in range(n_balls):
        ang = (i + 0.5) * 2 * math.pi / n_balls
        xi = geometry.covector_from_angle(m, base, ang, 0)
        cover.append((geometry.CotangentPoint(base.copy(), xi, 0), radius))
    return cover


def test_recurrence_partition_conserves_measure(torus):
    base = np.array([0.137, 0.358])
    H = submanifold.point(torus, base, 0, density=16)
    cover = direction_ball_cover(torus, base, 8)
    sets = returns.recurrence_decomposition(H, cover, 5.0, N=9, T_hor=20.0)
    assert not sets.inconclusive
    total = sets.sigma_B + sum(sets.sigma_groups)
    assert total == pytest.approx(2 * math.pi, rel=1e-10)
    assert len(sets.groups) == 8
    # longer observation can only move mass out of the non-returning part
    sets_short = returns.recurrence_decomposition(H, cover, 2.0, N=9, T_hor=20.0)
    assert sets.sigma_B <= sets_short.sigma_B + 1e-12


def test_recurrence_horizon_cap_is_inconclusive(torus):
    base = np.array([0.137, 0.358])
    H = submanifold.point(torus, base, 0, density=12)
    cover = direction_ball_cover(torus, base, 8)
    sets = returns.recurrence_decomposition(H, cover, 100.0, N=9, T_hor=400.0,
                                            horizon_cap=50.0)
    assert sets.inconclusive
    assert sets.sigma_B == pytest.approx(2 * math.pi, rel=1e-10)
    assert sum(sets.sigma_groups) == pytest.approx(0.0, abs=1e-12)


def test_recurrence_requires_full_cover(torus):
    base = np.array([0.137, 0.358])
    H = submanifold.point(torus, base, 0, density=12)
    cover = direction_ball_cover(torus, base, 8)[:3]
    with pytest.raises(CoverError):
        returns.recurrence_decomposition(H, cover, 5.0, T_hor=20.0)


def test_first_return_rejects_tight_prox(torus):
    pt = submanifold.point(torus, [0.3, 0.4], density=8)
    rho = submanifold.sample_conormal(pt)[0].rho
    with pytest.raises(DomainError):
        returns.first_return(pt, rho, 1.0, prox_tol=1e-9)


def test_write_returns_csv_roundtrip(tmp_path, torus):
    H = submanifold.closed_geodesic(
        torus, geometry.CotangentPoint(np.array([0.37, 0.0]), np.array([0.0, 1.0])),
        1.0, density=8)
    recs = returns.all_returns(H, 1.6)
    path = tmp_path / "ret.csv"
    returns.write_returns_csv(recs, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == len(recs) + 1
    assert lines[0].split(",")[0] == "sample_index"
