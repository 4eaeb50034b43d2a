"""Conormal sampling and geometric invariants of the reference submanifolds."""

import math

import numpy as np
import pytest

from eigentubes import geometry, submanifold
from eigentubes.errors import DomainError, InputError


def test_equator_conormal_measure(sphere):
    eq = submanifold.latitude_circle(sphere, math.pi / 2, density=20)
    assert eq.codim == 1
    assert eq.length == pytest.approx(2 * math.pi, rel=1e-10)
    # two conormal branches over each arclength element
    assert submanifold.conormal_measure(eq) == pytest.approx(4 * math.pi, rel=1e-10)


def test_point_conormal_measure(torus):
    pt = submanifold.point(torus, [0.25, 0.5], density=20)
    assert submanifold.conormal_measure(pt) == pytest.approx(2 * math.pi, rel=1e-10)
    samples = submanifold.sample_conormal(pt)
    assert len(samples) >= 8
    for s in samples:
        assert np.allclose(s.rho.x, [0.25, 0.5])
        assert geometry.conorm(torus, s.rho) == pytest.approx(1.0, abs=1e-10)
    assert sum(s.weight for s in samples) == pytest.approx(2 * math.pi, rel=1e-10)


def test_equator_samples_unit_and_two_branches(sphere):
    eq = submanifold.latitude_circle(sphere, math.pi / 2, density=16)
    samples = submanifold.sample_conormal(eq)
    assert sorted(set(s.branch for s in samples)) == [-1, 1]
    for s in samples:
        assert geometry.conorm(sphere, s.rho) == pytest.approx(1.0, abs=1e-9)
        # conormal to the equator: no phi component
        assert abs(s.rho.xi[1]) < 1e-9


def test_region_filter_halves_measure(sphere):
    eq = submanifold.latitude_circle(sphere, math.pi / 2, density=20)
    half = submanifold.conormal_measure(eq, region=lambda rho: rho.xi[0] > 0)
    assert half == pytest.approx(2 * math.pi, rel=1e-10)


def test_param_curve_circle_length(torus):
    ts = np.arange(32) / 32
    nodes = np.stack([0.5 + 0.2 * np.cos(2 * np.pi * ts),
                      0.5 + 0.2 * np.sin(2 * np.pi * ts)], axis=1)
    pc = submanifold.param_curve(torus, nodes, density=16)
    assert pc.length == pytest.approx(2 * math.pi * 0.2, abs=1e-5)
    assert submanifold.conormal_measure(pc) == pytest.approx(2 * pc.length, rel=1e-12)
    # conormal samples are orthogonal to the circle tangent in the flat metric
    for s in submanifold.sample_conormal(pc):
        radial = s.rho.x - np.array([0.5, 0.5])
        radial /= np.linalg.norm(radial)
        cosang = abs(float(np.dot(s.rho.xi, radial)))
        assert cosang == pytest.approx(1.0, abs=1e-3)


def test_param_curve_input_checks(torus, sphere):
    with pytest.raises(InputError):
        submanifold.param_curve(torus, [(0.1, 0.1), (0.2, 0.2), (0.3, 0.1)])
    with pytest.raises(DomainError):
        submanifold.param_curve(sphere, [(0.1, 0.1), (0.2, 0.2), (0.3, 0.1), (0.2, 0.0)])


def test_closed_geodesic_vertical_circle(torus):
    p0 = geometry.CotangentPoint(np.array([0.37, 0.0]), np.array([0.0, 1.0]))
    cg = submanifold.closed_geodesic(torus, p0, 1.0, density=12)
    assert cg.length == pytest.approx(1.0, rel=1e-12)
    assert np.ptp(cg.xs[:, 0]) == pytest.approx(0.0, abs=1e-12)
    assert submanifold.conormal_measure(cg) == pytest.approx(2.0, rel=1e-10)


def test_closed_geodesic_sphere_equator(sphere):
    p0 = geometry.CotangentPoint(np.array([math.pi / 2, 0.0]), np.array([0.0, 1.0]))
    cg = submanifold.closed_geodesic(sphere, p0, 2 * math.pi, density=12)
    assert cg.length == pytest.approx(2 * math.pi, rel=1e-9)
    # stays on the equator
    assert np.max(np.abs(cg.xs[:, 0] - math.pi / 2)) < 1e-9


def test_injectivity_time_torus_point(torus):
    pt = submanifold.point(torus, [0.3, 0.4], density=16)
    t = submanifold.injectivity_time(pt)
    # opposite normal directions meet near the half-diameter; separation
    # tolerance shaves a bit off
    assert 0.40 <= t <= 0.50


def test_injectivity_time_sphere_equator_caps(sphere):
    eq = submanifold.latitude_circle(sphere, math.pi / 2, density=16)
    assert submanifold.injectivity_time(eq) == pytest.approx(1.0)


def test_with_density_rescales_sampling(torus):
    pt = submanifold.point(torus, [0.3, 0.4], density=8)
    dense = submanifold.with_density(pt, 32)
    assert dense.density == 32
    assert pt.density == 8
    assert len(submanifold.sample_conormal(dense)) > len(submanifold.sample_conormal(pt))
    assert submanifold.conormal_measure(dense) == pytest.approx(
        submanifold.conormal_measure(pt), rel=1e-9)
