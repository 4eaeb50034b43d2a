"""Submanifolds of the model surfaces and their unit conormal samples.

A submanifold is held as a quadrature: base nodes with arclength weights and
tangents (empty tangents for a point).  ``sample_conormal`` turns the
quadrature into weighted samples of the unit conormal bundle; for a point the
fiber is a full covector circle, for a curve the two unit branches.  Total
weight is 2*pi for a point and twice the length for a curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from . import flow as flow_mod
from . import geometry
from .errors import (ChartDomainError, DegenerateCurveError, DomainError,
                     InputError)
from .flow import FlowConfig
from .geometry import CotangentPoint, ManifoldModel

CURVATURE_SAFETY = 1.5  # reported curve-bending bound = safety * max |k_g|


@dataclass
class ConormalSample:
    rho: CotangentPoint
    weight: float
    base_index: int
    branch: int = 0      # +1 / -1 for curve branches, 0 for point fibers
    param: float = 0.0   # fiber angle (point) or arclength coordinate (curve)


@dataclass
class Submanifold:
    manifold: ManifoldModel
    kind: str            # Point | ClosedGeodesic | LatitudeCircle | ParamCurve
    codim: int
    density: int
    xs: np.ndarray       # (N, 2) base nodes in chart coordinates
    charts: np.ndarray   # (N,)
    weights: np.ndarray  # (N,) arclength weights (empty sum 1.0 for a point)
    tangents: np.ndarray | None
    length: float | None
    curvature_bound: float
    params: np.ndarray | None = None   # arclength coordinate per node
    _samples: list = field(default_factory=list, repr=False)
    _spline: object = None

    def conormal(self, density: int | None = None):
        if density is None or density == self.density:
            if not self._samples:
                self._samples = sample_conormal(self)
            return self._samples
        return sample_conormal(self, density)

    def total_conormal_weight(self) -> float:
        return sum(s.weight for s in self.conormal())

    def with_density(self, density: int) -> "Submanifold":
        return with_density(self, density)


# -- constructors -------------------------------------------------------------

def point(m: ManifoldModel, x, chart: int = 0, density: int = 20) -> Submanifold:
    x = np.asarray(x, dtype=float)
    if m.kind == "Sphere2" and not geometry.sphere_chart_ok(x, chart):
        raise ChartDomainError("point lies outside the trusted band of its chart")
    return Submanifold(m, "Point", m.dim, density,
                       xs=x[None, :], charts=np.array([chart]),
                       weights=np.array([1.0]), tangents=None,
                       length=None, curvature_bound=0.0,
                       params=np.array([0.0]))


def closed_geodesic(m: ManifoldModel, p0: CotangentPoint, length: float,
                    density: int = 20, cfg: FlowConfig | None = None) -> Submanifold:
    if length <= 0:
        raise InputError("length must be positive")
    cfg = cfg or FlowConfig()
    end = flow_mod.geodesic_flow(m, p0, length, cfg).p
    gap = geometry.phase_distance(m, end, geometry.normalize_point(m, p0))
    if gap > 1e-5 * max(1.0, length):
        raise InputError(f"geodesic does not close after the given length (gap {gap})")
    n = max(8, math.ceil(density * length))
    ts = (np.arange(n) + 0.5) * (length / n)
    xs, xis, charts = flow_mod.dense_trajectory(m, p0, ts, cfg)
    tangents = np.empty_like(xis)
    for i in range(n):
        md = geometry.metric_at(m, xs[i], int(charts[i]))
        tangents[i] = md.g_inv @ xis[i]
    return Submanifold(m, "ClosedGeodesic", m.dim - 1, density,
                       xs=xs, charts=charts,
                       weights=np.full(n, length / n), tangents=tangents,
                       length=length, curvature_bound=0.0, params=ts)


def latitude_circle(m: ManifoldModel, theta0: float, density: int = 20) -> Submanifold:
    if m.kind != "Sphere2":
        raise DomainError("latitude circles only exist on Sphere2")
    if not geometry.sphere_chart_ok([theta0, 0.0], 0):
        raise ChartDomainError("latitude circle too close to a chart pole")
    length = 2.0 * math.pi * math.sin(theta0)
    n = max(8, math.ceil(density * length))
    phis = (np.arange(n) + 0.5) * (2.0 * math.pi / n)
    xs = np.column_stack([np.full(n, theta0), phis])
    tangents = np.tile([0.0, 1.0], (n, 1))
    kg = abs(math.cos(theta0) / math.sin(theta0))
    return Submanifold(m, "LatitudeCircle", m.dim - 1, density,
                       xs=xs, charts=np.zeros(n, dtype=int),
                       weights=np.full(n, length / n), tangents=tangents,
                       length=length, curvature_bound=CURVATURE_SAFETY * kg,
                       params=phis * math.sin(theta0))


def param_curve(m: ManifoldModel, nodes, density: int = 20) -> Submanifold:
    if not m.is_torus:
        raise DomainError("ParamCurve is only supported on torus models")
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 2 or nodes.shape[1] != 2 or nodes.shape[0] < 4:
        raise InputError("need at least 4 curve nodes of dimension 2")
    closed = np.vstack([nodes, nodes[:1]])
    u_nodes = np.linspace(0.0, 1.0, len(closed))
    spline = CubicSpline(u_nodes, closed, bc_type="periodic")
    # arclength and curvature sweep on a fine parameter grid
    fine = np.linspace(0.0, 1.0, max(200, 40 * len(nodes)), endpoint=False)
    cs = spline(fine)
    dcs = spline(fine, 1)
    ddcs = spline(fine, 2)
    speeds_flat = np.linalg.norm(dcs, axis=1)
    if np.min(speeds_flat) < 1e-8:
        raise DegenerateCurveError("curve tangent vanishes")
    g_speeds = np.empty(len(fine))
    kgs = np.empty(len(fine))
    for i, u in enumerate(fine):
        md = geometry.metric_at(m, cs[i], 0)
        v = dcs[i]
        sp2 = float(v @ md.g @ v)
        g_speeds[i] = math.sqrt(sp2)
        acc = ddcs[i] + np.einsum("ijk,j,k->i", md.christoffel, v, v)
        vhat = v / g_speeds[i]
        tang = float(acc @ md.g @ vhat) * vhat
        perp = acc - tang
        kgs[i] = math.sqrt(max(float(perp @ md.g @ perp), 0.0)) / sp2
    length = float(np.mean(g_speeds))  # integral over the unit parameter circle
    n = max(16, math.ceil(density * length))
    us = (np.arange(n) + 0.5) / n
    xs = spline(us)
    tangents = spline(us, 1)
    w = np.empty(n)
    for i in range(n):
        md = geometry.metric_at(m, xs[i], 0)
        w[i] = math.sqrt(float(tangents[i] @ md.g @ tangents[i])) / n
    params = np.concatenate([[0.0], np.cumsum(w)])[:-1]
    sub = Submanifold(m, "ParamCurve", m.dim - 1, density,
                      xs=np.mod(xs, 1.0), charts=np.zeros(n, dtype=int),
                      weights=w, tangents=tangents,
                      length=float(np.sum(w)),
                      curvature_bound=CURVATURE_SAFETY * float(np.max(kgs)),
                      params=params)
    sub._spline = spline
    return sub


def with_density(H: Submanifold, density: int) -> Submanifold:
    """Rebuild the same submanifold at a different quadrature density."""
    m = H.manifold
    if H.kind == "Point":
        return point(m, H.xs[0], int(H.charts[0]), density)
    if H.kind == "LatitudeCircle":
        return latitude_circle(m, float(H.xs[0, 0]), density)
    if H.kind == "ClosedGeodesic":
        # reconstruct the seed covector from the first node
        md = geometry.metric_at(m, H.xs[0], int(H.charts[0]))
        xi = md.g @ H.tangents[0]
        p = CotangentPoint(H.xs[0], xi, int(H.charts[0]))
        t0 = float(H.params[0])
        p0 = flow_mod.geodesic_flow(m, p, -t0).p
        return closed_geodesic(m, p0, H.length, density)
    if H._spline is not None:
        knots = H._spline.x
        return param_curve(m, np.asarray(H._spline(knots[:-1])), density)
    raise InputError(f"cannot rebuild submanifold of kind {H.kind}")


# -- conormal sampling --------------------------------------------------------

def sample_conormal(H: Submanifold, density: int | None = None):
    density = density or H.density
    m = H.manifold
    out = []
    if H.kind == "Point":
        n = max(8, math.ceil(density * 2.0 * math.pi))
        x, chart = H.xs[0], int(H.charts[0])
        for j in range(n):
            alpha = (j + 0.5) * 2.0 * math.pi / n
            xi = geometry.covector_from_angle(m, x, alpha, chart)
            out.append(ConormalSample(CotangentPoint(x, xi, chart),
                                      2.0 * math.pi / n, 0, 0, alpha))
        return out
    base = H if density == H.density else with_density(H, density)
    for i in range(len(base.xs)):
        v = base.tangents[i]
        nv = float(np.linalg.norm(v))
        if nv < 1e-12:
            raise DegenerateCurveError("vanishing tangent at a quadrature node")
        x, chart = base.xs[i], int(base.charts[i])
        md = geometry.metric_at(m, x, chart)
        for branch in (+1, -1):
            xi_raw = branch * np.array([-v[1], v[0]])
            c = math.sqrt(float(xi_raw @ md.g_inv @ xi_raw))
            xi = xi_raw / c
            if abs(float(xi @ v)) > 1e-9 * nv:
                raise DegenerateCurveError("conormality residual too large")
            out.append(ConormalSample(CotangentPoint(x, xi, chart),
                                      float(base.weights[i]), i, branch,
                                      float(base.params[i])))
    return out


def conormal_measure(H: Submanifold, region=None, density: int | None = None) -> float:
    """Weight of the conormal samples whose phase point satisfies the predicate."""
    total = 0.0
    for s in H.conormal(density):
        if region is None or region(s.rho):
            total += s.weight
    return total


# -- injectivity time ---------------------------------------------------------

def _flow_out_coords(H: Submanifold, samples, ts, cfg) -> np.ndarray:
    """Phase coordinates of G^t(sample) for every sample and t; shape (ns, nt, d)."""
    m = H.manifold
    ns, nt = len(samples), len(ts)
    out = np.empty((ns, nt, geometry.phase_dim(m)))
    exact = m.kind in ("FlatTorus2", "Sphere2") or m.amplitude == 0.0
    if exact:
        xs = np.array([s.rho.x for s in samples])
        xis = np.array([s.rho.xi for s in samples])
        charts = np.array([s.rho.chart for s in samples])
        for j, t in enumerate(ts):
            fx, fxi, fch = flow_mod.flow_states(m, xs, xis, charts, float(t))
            for i in range(ns):
                out[i, j] = geometry.phase_coords(
                    m, CotangentPoint(fx[i], fxi[i], int(fch[i])))
        return out
    neg = ts[ts < 0][::-1]
    pos = ts[ts >= 0]
    for i, s in enumerate(samples):
        row = {}
        for sub in (neg, pos):
            if len(sub) == 0:
                continue
            xs, xis, charts = flow_mod.dense_trajectory(m, s.rho, sub, cfg)
            for k, t in enumerate(sub):
                row[float(t)] = geometry.phase_coords(
                    m, CotangentPoint(xs[k], xis[k], int(charts[k])))
        for j, t in enumerate(ts):
            out[i, j] = row[float(t)]
    return out


def injectivity_time(H: Submanifold, grid: float = 1e-2, T_probe: float = 2.0,
                     sep_tol: float = 0.04, samples=None,
                     cfg: FlowConfig | None = None) -> float:
    """Largest dyadically certified tau with an injective flow-out on |t| < tau.

    Two flow-out points closer than sep_tol count as a collision when their
    seeds are genuinely distinct: parameter separation (|dt| plus seed phase
    distance) above 4*sep_tol.  The result is capped at min(1, T_probe) and
    resolved to 2^-9 of the cap.
    """
    if grid <= 0 or T_probe <= 0 or sep_tol <= 0:
        raise DomainError("grid, T_probe and sep_tol must be positive")
    cfg = cfg or FlowConfig()
    m = H.manifold
    if samples is None:
        samples = H.conormal()
    coords0 = np.array([geometry.phase_coords(m, s.rho) for s in samples])
    tree0 = cKDTree(coords0)
    for i, j in tree0.query_pairs(1e-12):
        raise InputError(f"duplicated conormal samples {i} and {j}")

    cap = min(1.0, T_probe)
    boxsize = geometry.phase_boxsize(m)

    def seed_distance(i: int, j: int) -> float:
        d = geometry.phase_delta(m, coords0[i], coords0[j])
        return float(np.linalg.norm(d))

    def violates(tau: float) -> bool:
        nt = max(3, int(math.ceil(2.0 * tau / grid)) + 1)
        ts = np.linspace(-tau, tau, nt)
        pts = _flow_out_coords(H, samples, ts, cfg)
        flat = pts.reshape(-1, pts.shape[-1])
        if boxsize is not None:
            flat = flat.copy()
            flat[:, :2] = np.mod(flat[:, :2], 1.0)
            tree = cKDTree(flat, boxsize=boxsize)
        else:
            tree = cKDTree(flat)
        for aa, bb in tree.query_pairs(sep_tol):
            ia, ja = aa // nt, aa % nt
            ib, jb = bb // nt, bb % nt
            sep = abs(ts[ja] - ts[jb])
            if ia != ib:
                sep += seed_distance(ia, ib)
            if sep > 4.0 * sep_tol:
                return True
        return False

    if not violates(cap):
        return cap
    lo, hi = 0.0, cap
    for _ in range(9):
        mid = 0.5 * (lo + hi)
        if violates(mid):
            hi = mid
        else:
            lo = mid
    return lo
