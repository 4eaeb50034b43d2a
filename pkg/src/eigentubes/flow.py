"""Unit-speed geodesic flow and its linearization.

The generator is the Hamiltonian vector field of H(x, xi) = |xi|_g^2 / 2,
restricted to the unit cosphere bundle, so trajectories are unit-speed
geodesics and the flow time is arclength.  Flat torus and sphere use closed
forms (the sphere tangent map is evaluated by conjugating the constant-
curvature Jacobi propagator with a parallel frame); the conformal torus is
integrated by the compiled implicit-midpoint kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry, kernels
from .errors import DomainError, InputError, ToleranceError
from .geometry import CotangentPoint, ManifoldModel

EXPANSION_RATE_FLOOR = 0.05  # finite-horizon estimates never report below this


@dataclass(frozen=True)
class FlowConfig:
    step: float = 0.01
    tol: float = 1e-8
    renormalize: bool = False

    def __post_init__(self):
        if not (0.0 < self.step <= 0.1):
            raise InputError("flow step must lie in (0, 0.1]")
        if not (0.0 < self.tol <= 1e-6):
            raise InputError("flow tol must lie in (0, 1e-6]")


@dataclass
class FlowState:
    p: CotangentPoint
    jac: np.ndarray | None
    t: float
    chart_switches: list = field(default_factory=list)
    conorm_drift: float = 0.0
    n_steps: int = 0


def _require_unit(m: ManifoldModel, p: CotangentPoint):
    c = geometry.conorm(m, p)
    if abs(c - 1.0) > 1e-8:
        raise DomainError(f"covector must have unit conorm, got {c!r}")


# -- closed forms -------------------------------------------------------------

def _flat_flow(p: CotangentPoint, t: float, with_jac: bool) -> FlowState:
    x = np.mod(p.x + t * p.xi, 1.0)
    jac = None
    if with_jac:
        jac = np.eye(4)
        jac[0, 2] = jac[1, 3] = t
    return FlowState(CotangentPoint(x, p.xi, 0), jac, t)


def _sphere_frame_matrix(p: CotangentPoint) -> np.ndarray:
    """Columns: chart components of the velocity direction and its +90 rotation."""
    st = math.sin(p.x[0])
    c, s = p.xi[0], p.xi[1] / st
    return np.array([[c, -s], [s / st, c / st]])


def _sphere_p_blocks(m: ManifoldModel, p: CotangentPoint):
    E = _sphere_frame_matrix(p)
    g = geometry.metric_at(m, p.x, p.chart).g
    return E, g @ E


def _sphere_flow(m: ManifoldModel, p: CotangentPoint, t: float, with_jac: bool) -> FlowState:
    X, V = geometry.sphere_cotangent_embed(p)
    ct, st = math.cos(t), math.sin(t)
    X_t = X * ct + V * st
    V_t = -X * st + V * ct
    chart = p.chart
    switches = []
    x_t = geometry.sphere_unembed(X_t, chart)
    if not geometry.sphere_chart_ok(x_t, chart):
        chart = 1 - chart
        x_t = geometry.sphere_unembed(X_t, chart)
        switches.append((t, p.chart, chart))
    q = geometry.sphere_cotangent_unembed(X_t, V_t, chart)
    jac = None
    if with_jac:
        E0, F0 = _sphere_p_blocks(m, p)
        E1, F1 = _sphere_p_blocks(m, q)
        D = np.eye(4)
        D[0, 2] = t
        D[1, 1] = D[3, 3] = ct
        D[1, 3] = st
        D[3, 1] = -st
        P1 = np.zeros((4, 4))
        P1[:2, :2] = E1
        P1[2:, 2:] = F1
        P0_inv = np.zeros((4, 4))
        P0_inv[:2, :2] = np.linalg.inv(E0)
        P0_inv[2:, 2:] = np.linalg.inv(F0)
        jac = P1 @ D @ P0_inv
    return FlowState(q, jac, t, switches)


# -- public flow --------------------------------------------------------------

def geodesic_flow(m: ManifoldModel, p: CotangentPoint, t: float,
                  cfg: FlowConfig | None = None, with_jac: bool = False) -> FlowState:
    cfg = cfg or FlowConfig()
    _require_unit(m, p)
    if m.kind == "FlatTorus2" or (m.kind == "ConformalTorus2" and m.amplitude == 0.0):
        return _flat_flow(p, t, with_jac)
    if m.kind == "Sphere2":
        return _sphere_flow(m, p, t, with_jac)
    z0 = np.concatenate([p.x, p.xi])
    try:
        z, jac, drift, n_steps = kernels.conformal_flow(
            m.amplitude, m.frequency, z0, t, cfg.step, cfg.tol,
            cfg.renormalize, with_jac)
    except RuntimeError as exc:
        raise ToleranceError(str(exc)) from exc
    if drift > 10.0 * cfg.tol:
        raise ToleranceError(f"conorm drift {drift} exceeds 10x tol {cfg.tol}")
    q = CotangentPoint(np.mod(z[:2], 1.0), z[2:], 0)
    return FlowState(q, jac if with_jac else None, t,
                     conorm_drift=drift, n_steps=n_steps)


def tangent_flow(m: ManifoldModel, p: CotangentPoint, t: float,
                 cfg: FlowConfig | None = None) -> np.ndarray:
    return geodesic_flow(m, p, t, cfg, with_jac=True).jac


def dense_trajectory(m: ManifoldModel, p: CotangentPoint, ts,
                     cfg: FlowConfig | None = None):
    """Sample the trajectory at monotone times starting from the t=0 side.

    Returns (xs, xis, charts) arrays.  Torus positions are wrapped to [0,1)^2.
    """
    cfg = cfg or FlowConfig()
    _require_unit(m, p)
    ts = np.asarray(ts, dtype=float)
    n = len(ts)
    if m.kind == "FlatTorus2" or (m.kind == "ConformalTorus2" and m.amplitude == 0.0):
        xs = np.mod(p.x[None, :] + ts[:, None] * p.xi[None, :], 1.0)
        xis = np.tile(p.xi, (n, 1))
        return xs, xis, np.zeros(n, dtype=int)
    if m.kind == "Sphere2":
        X, V = geometry.sphere_cotangent_embed(p)
        ct, st = np.cos(ts), np.sin(ts)
        Xs = X[None, :] * ct[:, None] + V[None, :] * st[:, None]
        Vs = -X[None, :] * st[:, None] + V[None, :] * ct[:, None]
        return _sphere_unembed_batch(Xs, Vs)
    try:
        traj, drift = kernels.conformal_flow_dense(
            m.amplitude, m.frequency, np.concatenate([p.x, p.xi]),
            ts, cfg.step, cfg.tol, cfg.renormalize)
    except RuntimeError as exc:
        raise ToleranceError(str(exc)) from exc
    if drift > 10.0 * cfg.tol:
        raise ToleranceError(f"conorm drift {drift} exceeds 10x tol {cfg.tol}")
    return np.mod(traj[:, :2], 1.0), traj[:, 2:].copy(), np.zeros(n, dtype=int)


# -- batch flow over state arrays ---------------------------------------------

def _sphere_embed_batch(xs: np.ndarray, xis: np.ndarray, charts: np.ndarray):
    th, ph = xs[:, 0], xs[:, 1]
    st, ct = np.sin(th), np.cos(th)
    sp, cp = np.sin(ph), np.cos(ph)
    c0 = charts == 0
    X = np.empty((len(xs), 3))
    e_th = np.empty_like(X)
    e_ph = np.empty_like(X)
    X[c0] = np.column_stack([st * cp, st * sp, ct])[c0]
    X[~c0] = np.column_stack([ct, st * cp, st * sp])[~c0]
    e_th[c0] = np.column_stack([ct * cp, ct * sp, -st])[c0]
    e_th[~c0] = np.column_stack([-st, ct * cp, ct * sp])[~c0]
    e_ph[c0] = np.column_stack([-st * sp, st * cp, np.zeros_like(st)])[c0]
    e_ph[~c0] = np.column_stack([np.zeros_like(st), -st * sp, st * cp])[~c0]
    V = xis[:, :1] * e_th + (xis[:, 1:] / (st * st)[:, None]) * e_ph
    return X, V


def _sphere_unembed_batch(Xs: np.ndarray, Vs: np.ndarray):
    margin = geometry.SPHERE_CHART_MARGIN
    th0 = np.arccos(np.clip(Xs[:, 2], -1.0, 1.0))
    charts = np.where((th0 > margin) & (th0 < math.pi - margin), 0, 1)
    n = len(Xs)
    xs = np.empty((n, 2))
    xis = np.empty((n, 2))
    c0 = charts == 0
    for mask, order in ((c0, (0, 1, 2)), (~c0, (1, 2, 0))):
        if not np.any(mask):
            continue
        a, b, c = order
        X = Xs[mask]
        th = np.arccos(np.clip(X[:, c], -1.0, 1.0))
        ph = np.arctan2(X[:, b], X[:, a]) % (2.0 * math.pi)
        st, ct = np.sin(th), np.cos(th)
        sp, cp = np.sin(ph), np.cos(ph)
        e_th = np.empty((len(X), 3))
        e_ph = np.empty((len(X), 3))
        e_th[:, a] = ct * cp
        e_th[:, b] = ct * sp
        e_th[:, c] = -st
        e_ph[:, a] = -st * sp
        e_ph[:, b] = st * cp
        e_ph[:, c] = 0.0
        V = Vs[mask]
        xs[mask] = np.column_stack([th, ph])
        xis[mask] = np.column_stack([np.sum(V * e_th, axis=1),
                                     np.sum(V * e_ph, axis=1)])
    return xs, xis, charts


def flow_states(m: ManifoldModel, xs: np.ndarray, xis: np.ndarray,
                charts: np.ndarray, t: float, cfg: FlowConfig | None = None):
    """Flow an array of unit covectors by a common time."""
    cfg = cfg or FlowConfig()
    if m.kind == "FlatTorus2" or (m.kind == "ConformalTorus2" and m.amplitude == 0.0):
        return np.mod(xs + t * xis, 1.0), xis.copy(), charts.copy()
    if m.kind == "Sphere2":
        X, V = _sphere_embed_batch(xs, xis, charts)
        ct, st = math.cos(t), math.sin(t)
        return _sphere_unembed_batch(X * ct + V * st, -X * st + V * ct)
    out_x = np.empty_like(xs)
    out_xi = np.empty_like(xis)
    for i in range(len(xs)):
        st = geodesic_flow(m, CotangentPoint(xs[i], xis[i], int(charts[i])), t, cfg)
        out_x[i] = st.p.x
        out_xi[i] = st.p.xi
    return out_x, out_xi, np.zeros(len(xs), dtype=int)


def phase_speed_bound(m: ManifoldModel) -> float:
    """Upper bound on the speed of trajectories in phase_coords coordinates."""
    if m.kind == "Sphere2":
        return math.sqrt(2.0)
    if m.kind == "FlatTorus2":
        return 1.0
    a, w = m.amplitude, 2.0 * math.pi * m.frequency
    # |xdot| <= e^{a}; |xidot| <= a w e^{a} on the unit bundle
    return math.exp(a) * math.hypot(1.0, a * w)


# -- expansion rate and the log time ------------------------------------------

def _sobol(n: int, dim: int, seed: int) -> np.ndarray:
    from scipy.stats import qmc

    s = qmc.Sobol(d=dim, scramble=True, seed=seed)
    m_pow = max(1, math.ceil(math.log2(max(n, 2))))
    return s.random_base2(m_pow)[:n]


def max_expansion_rate(obj, sample_count: int = 64, T_max: float = 10.0,
                       seed: int = 0, floor: float = EXPANSION_RATE_FLOOR,
                       cfg: FlowConfig | None = None) -> float:
    """Finite-horizon estimate of the largest Lyapunov-type stretching rate.

    Accepts either a manifold model (quasi-random covectors, tangent-flow
    norms) or a hyperbolic toy map (matrix power norm).  Estimates below the
    floor are reported as the floor.
    """
    if hasattr(obj, "matrix"):
        steps = max(1, int(T_max))
        M = np.linalg.matrix_power(np.asarray(obj.matrix, dtype=float), steps)
        return max(math.log(np.linalg.norm(M, 2)) / steps, floor)
    m: ManifoldModel = obj
    if T_max <= 0:
        raise DomainError("T_max must be positive")
    u = _sobol(sample_count, 3, seed)
    best = 0.0
    for row in u:
        if m.is_torus:
            x = row[:2].copy()
            chart = 0
        else:
            # area-uniform, clipped into the trusted chart band
            th = math.acos(1.0 - 2.0 * row[0])
            margin = geometry.SPHERE_CHART_MARGIN
            th = min(max(th, margin + 0.05), math.pi - margin - 0.05)
            x = np.array([th, 2.0 * math.pi * row[1]])
            chart = 0
        alpha = 2.0 * math.pi * row[2]
        xi = geometry.covector_from_angle(m, x, alpha, chart)
        p = CotangentPoint(x, xi, chart)
        jac = tangent_flow(m, p, T_max, cfg)
        best = max(best, math.log(np.linalg.norm(jac, 2)) / T_max)
    return max(best, floor)


def ehrenfest_time(h: float, Lambda: float) -> float:
    """log(1/h) / (2 * Lambda); the usable certification horizon scale."""
    if not (0.0 < h < 1.0):
        raise DomainError("h must lie in (0, 1)")
    if Lambda <= 0.0:
        raise DomainError("expansion rate must be positive")
    return math.log(1.0 / h) / (2.0 * Lambda)
