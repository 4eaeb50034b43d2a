"""Model manifolds, charts, metrics and phase-space coordinates.

Three closed surfaces are supported:

* ``FlatTorus2``      -- [0,1)^2 with the Euclidean metric,
* ``ConformalTorus2`` -- [0,1)^2 with g = exp(2*f(x1)) * delta where
  f(x1) = amplitude * cos(2*pi*frequency*x1),
* ``Sphere2``         -- the round unit sphere, covered by two colatitude
  charts with poles on the z-axis (chart 0) and the x-axis (chart 1).

Points of the unit cotangent bundle are held as ``CotangentPoint`` records in
chart coordinates.  Proximity queries in phase space use ``phase_coords``,
which maps every model into a fixed Euclidean (or periodic Euclidean) space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartDomainError, ConvergenceError, DomainError, InputError
from . import kernels

SPHERE_CHART_MARGIN = 0.2  # colatitude band a chart is trusted on


@dataclass(frozen=True)
class ManifoldModel:
    kind: str
    amplitude: float = 0.0
    frequency: int = 1
    dim: int = 2

    def __post_init__(self):
        if self.kind not in ("Sphere2", "FlatTorus2", "ConformalTorus2"):
            raise InputError(f"unknown manifold kind {self.kind!r}")
        if self.kind == "ConformalTorus2":
            if not (0.0 <= self.amplitude < 0.5):
                raise InputError("conformal amplitude must lie in [0, 0.5)")
            if self.frequency < 1 or self.frequency != int(self.frequency):
                raise InputError("conformal frequency must be a positive integer")
        elif self.amplitude != 0.0:
            raise InputError("amplitude only applies to ConformalTorus2")
        if self.dim != 2:
            raise InputError("only two-dimensional models are implemented")

    @property
    def is_torus(self) -> bool:
        return self.kind in ("FlatTorus2", "ConformalTorus2")


def sphere() -> ManifoldModel:
    return ManifoldModel("Sphere2")


def flat_torus() -> ManifoldModel:
    return ManifoldModel("FlatTorus2")


def conformal_torus(amplitude: float, frequency: int = 1) -> ManifoldModel:
    return ManifoldModel("ConformalTorus2", amplitude=amplitude, frequency=frequency)


@dataclass
class CotangentPoint:
    """A covector (x, xi) in chart coordinates."""

    x: np.ndarray
    xi: np.ndarray
    chart: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).copy()
        self.xi = np.asarray(self.xi, dtype=float).copy()
        if self.x.shape != (2,) or self.xi.shape != (2,):
            raise InputError("CotangentPoint needs two base and two covector components")
        if self.chart not in (0, 1):
            raise InputError("chart index must be 0 or 1")

    def copy(self) -> "CotangentPoint":
        return CotangentPoint(self.x.copy(), self.xi.copy(), self.chart)


@dataclass
class MetricData:
    g: np.ndarray
    g_inv: np.ndarray
    christoffel: np.ndarray  # [i, j, k] = Gamma^i_{jk}
    sqrt_det: float


# -- conformal potential ----------------------------------------------------

def conformal_potential(m: ManifoldModel, x1: float) -> float:
    return m.amplitude * math.cos(2.0 * math.pi * m.frequency * x1)


def conformal_potential_d1(m: ManifoldModel, x1: float) -> float:
    w = 2.0 * math.pi * m.frequency
    return -m.amplitude * w * math.sin(w * x1)


def conformal_potential_d2(m: ManifoldModel, x1: float) -> float:
    w = 2.0 * math.pi * m.frequency
    return -m.amplitude * w * w * math.cos(w * x1)


def gauss_curvature(m: ManifoldModel, x: np.ndarray, chart: int = 0) -> float:
    """Gauss curvature at a base point (needed by the Jacobi equation)."""
    if m.kind == "FlatTorus2":
        return 0.0
    if m.kind == "Sphere2":
        return 1.0
    # g = exp(2f) delta gives K = -exp(-2f) * laplace(f); f depends on x1 only.
    f = conformal_potential(m, x[0])
    return -math.exp(-2.0 * f) * conformal_potential_d2(m, x[0])


# -- metric -----------------------------------------------------------------

def metric_at(m: ManifoldModel, x, chart: int = 0) -> MetricData:
    x = np.asarray(x, dtype=float)
    gamma = np.zeros((2, 2, 2))
    if m.kind == "FlatTorus2":
        eye = np.eye(2)
        return MetricData(eye.copy(), eye.copy(), gamma, 1.0)
    if m.kind == "ConformalTorus2":
        f = conformal_potential(m, x[0])
        df = np.array([conformal_potential_d1(m, x[0]), 0.0])
        e2 = math.exp(2.0 * f)
        g = e2 * np.eye(2)
        g_inv = (1.0 / e2) * np.eye(2)
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    gamma[i, j, k] = (
                        (i == j) * df[k] + (i == k) * df[j] - (j == k) * df[i]
                    )
        return MetricData(g, g_inv, gamma, e2)
    # Sphere2, both charts use colatitude/longitude form
    th = x[0]
    s = math.sin(th)
    if abs(s) < 1e-8:
        raise ChartDomainError(f"sphere chart {chart} degenerate at colatitude {th}")
    c = math.cos(th)
    g = np.diag([1.0, s * s])
    g_inv = np.diag([1.0, 1.0 / (s * s)])
    gamma[0, 1, 1] = -s * c
    gamma[1, 0, 1] = gamma[1, 1, 0] = c / s
    return MetricData(g, g_inv, gamma, abs(s))


def conorm(m: ManifoldModel, p: CotangentPoint) -> float:
    md = metric_at(m, p.x, p.chart)
    return math.sqrt(float(p.xi @ md.g_inv @ p.xi))


def covector_from_angle(m: ManifoldModel, x, alpha: float, chart: int = 0) -> np.ndarray:
    """Unit covector at angle alpha in the orthonormal coframe of a diagonal metric."""
    md = metric_at(m, x, chart)
    return np.array([
        math.sqrt(md.g[0, 0]) * math.cos(alpha),
        math.sqrt(md.g[1, 1]) * math.sin(alpha),
    ])


def angle_from_covector(m: ManifoldModel, p: CotangentPoint) -> float:
    md = metric_at(m, p.x, p.chart)
    return math.atan2(p.xi[1] / math.sqrt(md.g[1, 1]), p.xi[0] / math.sqrt(md.g[0, 0]))


# -- sphere embedding helpers ----------------------------------------------

def sphere_embed(x, chart: int = 0) -> np.ndarray:
    th, ph = float(x[0]), float(x[1])
    st, ct = math.sin(th), math.cos(th)
    sp, cp = math.sin(ph), math.cos(ph)
    if chart == 0:
        return np.array([st * cp, st * sp, ct])
    return np.array([ct, st * cp, st * sp])


def sphere_unembed(X, chart: int = 0) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if chart == 0:
        th = math.acos(max(-1.0, min(1.0, X[2])))
        ph = math.atan2(X[1], X[0]) % (2.0 * math.pi)
    else:
        th = math.acos(max(-1.0, min(1.0, X[0])))
        ph = math.atan2(X[2], X[1]) % (2.0 * math.pi)
    return np.array([th, ph])


def sphere_coordinate_frame(x, chart: int = 0):
    """Embedded coordinate basis vectors (d/dtheta, d/dphi); |d/dphi| = sin(theta)."""
    th, ph = float(x[0]), float(x[1])
    st, ct = math.sin(th), math.cos(th)
    sp, cp = math.sin(ph), math.cos(ph)
    if chart == 0:
        e_th = np.array([ct * cp, ct * sp, -st])
        e_ph = np.array([-st * sp, st * cp, 0.0])
    else:
        e_th = np.array([-st, ct * cp, ct * sp])
        e_ph = np.array([0.0, -st * sp, st * cp])
    return e_th, e_ph


def sphere_cotangent_embed(p: CotangentPoint):
    """Map (x, xi) to (position X, metric-dual velocity V) in R^3 x R^3."""
    X = sphere_embed(p.x, p.chart)
    e_th, e_ph = sphere_coordinate_frame(p.x, p.chart)
    st = math.sin(p.x[0])
    if abs(st) < 1e-12:
        raise ChartDomainError("cannot embed a covector at a chart pole")
    V = p.xi[0] * e_th + (p.xi[1] / (st * st)) * e_ph
    return X, V


def sphere_cotangent_unembed(X, V, chart: int) -> CotangentPoint:
    x = sphere_unembed(X, chart)
    e_th, e_ph = sphere_coordinate_frame(x, chart)
    xi = np.array([float(V @ e_th), float(V @ e_ph)])
    return CotangentPoint(x, xi, chart)


def sphere_chart_ok(x, chart: int = 0, margin: float = SPHERE_CHART_MARGIN) -> bool:
    return margin < float(x[0]) < math.pi - margin


def switch_chart(m: ManifoldModel, p: CotangentPoint) -> CotangentPoint:
    if m.kind != "Sphere2":
        raise DomainError("chart switching only applies to Sphere2")
    X, V = sphere_cotangent_embed(p)
    other = 1 - p.chart
    q = sphere_cotangent_unembed(X, V, other)
    if math.sin(q.x[0]) < 1e-8:
        raise ChartDomainError("target chart is degenerate at this point")
    return q


def normalize_point(m: ManifoldModel, p: CotangentPoint) -> CotangentPoint:
    """Wrap torus coordinates; move sphere points to a chart that holds them."""
    if m.is_torus:
        return CotangentPoint(np.mod(p.x, 1.0), p.xi, 0)
    if sphere_chart_ok(p.x, p.chart):
        return p.copy()
    return switch_chart(m, p)


# -- phase-space proximity coordinates ---------------------------------------

def phase_dim(m: ManifoldModel) -> int:
    return 4 if m.is_torus else 6


def phase_boxsize(m: ManifoldModel):
    """Per-axis periods for cKDTree queries; 0 marks a non-periodic axis."""
    if m.is_torus:
        return np.array([1.0, 1.0, 0.0, 0.0])
    return None


def phase_coords(m: ManifoldModel, p: CotangentPoint) -> np.ndarray:
    if m.is_torus:
        return np.concatenate([np.mod(p.x, 1.0), p.xi])
    X, V = sphere_cotangent_embed(p)
    return np.concatenate([X, V])


def phase_coords_many(m: ManifoldModel, points) -> np.ndarray:
    return np.array([phase_coords(m, p) for p in points])


def phase_delta(m: ManifoldModel, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Componentwise difference of phase coordinates, wrapped on periodic axes."""
    d = u - v
    if m.is_torus:
        d[..., :2] -= np.round(d[..., :2])
    return d


def phase_distance(m: ManifoldModel, p: CotangentPoint, q: CotangentPoint) -> float:
    d = phase_delta(m, phase_coords(m, p), phase_coords(m, q))
    return float(np.linalg.norm(d))


# -- base-manifold distance --------------------------------------------------

def _flat_distance(x1: np.ndarray, x2: np.ndarray) -> float:
    d = x2 - x1
    d -= np.round(d)
    return float(np.linalg.norm(d))


def _conformal_distance(m: ManifoldModel, x1: np.ndarray, x2: np.ndarray,
                        step: float, tol: float) -> float:
    """Shortest geodesic length by Newton shooting over the nine nearest lifts."""
    a, q = m.amplitude, m.frequency
    base = x2 - x1
    shifts = [np.array([i, j], dtype=float) for i in (-1, 0, 1) for j in (-1, 0, 1)]
    shifts.sort(key=lambda s: float(np.linalg.norm(base + s)))
    best = None
    failures = []
    for shift in shifts:
        target = x1 + base + shift
        flat_len = float(np.linalg.norm(target - x1))
        if flat_len < 1e-14:
            return 0.0
        # conformal factor is pinched between exp(-a) and exp(a)
        if best is not None and flat_len * math.exp(-a) >= best:
            continue
        try:
            s = _shoot(m, x1, target, flat_len, step, tol)
        except ConvergenceError as exc:  # other lifts may still succeed
            failures.append(exc)
            continue
        if best is None or s < best:
            best = s
    if best is None:
        raise ConvergenceError(f"geodesic shooting failed for all lifts: {failures[0]}")
    return best


def _shoot(m: ManifoldModel, x1: np.ndarray, target: np.ndarray,
           flat_len: float, step: float, tol: float) -> float:
    a, q = m.amplitude, m.frequency
    d = target - x1
    psi = math.atan2(d[1], d[0])
    ef0 = math.exp(conformal_potential(m, x1[0]))
    ef1 = math.exp(conformal_potential(m, target[0]))
    s = flat_len * 0.5 * (ef0 + ef1)
    for _ in range(60):
        xi = ef0 * np.array([math.cos(psi), math.sin(psi)])
        z0 = np.concatenate([x1, xi])
        z, jac, _, _ = kernels.conformal_flow(a, q, z0, s, step, tol, False, True)
        F = z[:2] - target
        if float(np.linalg.norm(F)) < 1e-10:
            return s
        dxi = ef0 * np.array([-math.sin(psi), math.cos(psi)])
        col_psi = jac[:2, 2:] @ dxi
        e2_end = math.exp(-2.0 * conformal_potential(m, z[0]))
        col_s = e2_end * z[2:]
        M = np.column_stack([col_psi, col_s])
        try:
            delta = np.linalg.solve(M, -F)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular shooting Jacobian: {exc}") from exc
        # damp to keep the iteration inside the basin
        delta[0] = max(-0.5, min(0.5, delta[0]))
        delta[1] = max(-0.3 * max(s, 0.1), min(0.3 * max(s, 0.1), delta[1]))
        psi += delta[0]
        s += delta[1]
        if s <= 1e-9:
            s = 0.5 * flat_len * math.exp(-a)
    raise ConvergenceError("geodesic shooting did not converge in 60 iterations")


def distance(m: ManifoldModel, x1, x2, chart1: int = 0, chart2: int = 0,
             step: float = 0.01, tol: float = 1e-10) -> float:
    """Geodesic distance between base points."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if m.kind == "Sphere2":
        X1 = sphere_embed(x1, chart1)
        X2 = sphere_embed(x2, chart2)
        return math.acos(max(-1.0, min(1.0, float(X1 @ X2))))
    if m.kind == "FlatTorus2" or m.amplitude == 0.0:
        return _flat_distance(np.mod(x1, 1.0), np.mod(x2, 1.0))
    return _conformal_distance(m, np.mod(x1, 1.0), np.mod(x2, 1.0), step, tol)
