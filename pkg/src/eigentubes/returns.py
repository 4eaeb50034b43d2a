"""Return times to the conormal bundle, recurrence splitting, conjugate points.

The conormal bundle of a submanifold is represented by its weighted sample
cloud; "reaching SN*H" means passing within prox_tol of the cloud in phase
coordinates.  First-return detection scans the trajectory densely, keeps
local minima of the cloud distance that dip below prox_tol, and sharpens each
minimum with a bounded scalar minimization.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree

from . import flow as flow_mod
from . import geometry
from .errors import CoverError, DomainError, InputError
from .flow import FlowConfig
from .geometry import CotangentPoint, ManifoldModel
from .submanifold import Submanifold


def default_prox_tol(cfg: FlowConfig) -> float:
    return max(1e-3, 50.0 * cfg.tol)


class ConormalCloud:
    """KD-tree over the phase coordinates of a conormal sample set."""

    def __init__(self, m: ManifoldModel, samples):
        self.manifold = m
        self.samples = list(samples)
        self.coords = np.array([geometry.phase_coords(m, s.rho) for s in self.samples])
        boxsize = geometry.phase_boxsize(m)
        if boxsize is not None:
            pts = self.coords.copy()
            pts[:, :2] = np.mod(pts[:, :2], 1.0)
            self.tree = cKDTree(pts, boxsize=boxsize)
        else:
            self.tree = cKDTree(self.coords)

    def distance(self, coords: np.ndarray):
        d, idx = self.tree.query(coords)
        return d, idx


@dataclass
class ReturnRecord:
    rho: CotangentPoint
    T_H: float                      # math.inf marks a horizon-exceeded scan
    eta: CotangentPoint | None
    eta_residual: float
    crossings: list = field(default_factory=list)  # (t, CotangentPoint, residual)
    horizon: float = 0.0
    direction: int = +1
    sample_index: int = -1

    @property
    def horizon_exceeded(self) -> bool:
        return math.isinf(self.T_H)


def _point_at(m, rho, t, cfg) -> CotangentPoint:
    return flow_mod.geodesic_flow(m, rho, t, cfg).p


def find_crossing_events(m: ManifoldModel, rho: CotangentPoint, cloud: ConormalCloud,
                         T_max: float, prox_tol: float,
                         cfg: FlowConfig | None = None, direction: int = +1,
                         skip_initial: bool = True):
    """All proximity events (t, point, residual) with 0 < t <= T_max.

    Scans at a step small enough that a dip below prox_tol cannot be missed,
    then refines each local minimum.  skip_initial arms detection only after
    the trajectory has left the 2*prox_tol neighborhood once (used when rho
    itself lies on the cloud).
    """
    cfg = cfg or FlowConfig()
    if prox_tol < 2.0 * cfg.tol:
        raise DomainError("prox_tol must be at least twice the flow tolerance")
    if T_max <= 0:
        raise DomainError("T_max must be positive")
    speed = flow_mod.phase_speed_bound(m)
    dt = min(prox_tol / (2.0 * speed), 0.05)
    n = int(math.ceil(T_max / dt)) + 1
    ts = np.linspace(0.0, T_max, n) * (1 if direction >= 0 else -1)
    xs, xis, charts = flow_mod.dense_trajectory(m, rho, ts, cfg)
    coords = np.empty((n, geometry.phase_dim(m)))
    for i in range(n):
        coords[i] = geometry.phase_coords(m, CotangentPoint(xs[i], xis[i], int(charts[i])))
    if m.is_torus:
        coords[:, :2] = np.mod(coords[:, :2], 1.0)
    d, _ = cloud.distance(coords)

    armed = not skip_initial
    events = []
    for i in range(1, n - 1):
        if not armed:
            if d[i] > 2.0 * prox_tol:
                armed = True
            continue
        if d[i] < prox_tol and d[i] <= d[i - 1] and d[i] <= d[i + 1]:
            ta, tb = ts[i - 1], ts[i + 1]
            lo, hi = (ta, tb) if ta < tb else (tb, ta)

            def dist_at(t):
                p = _point_at(m, rho, float(t), cfg)
                c = geometry.phase_coords(m, p)
                if m.is_torus:
                    c = c.copy()
                    c[:2] = np.mod(c[:2], 1.0)
                return float(cloud.distance(c[None, :])[0][0])

            res = minimize_scalar(dist_at, bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-10, "maxiter": 200})
            t_star = float(res.x)
            residual = float(res.fun)
            if residual < prox_tol and (not events or
                                        abs(t_star - events[-1][0]) > dt):
                events.append((t_star, _point_at(m, rho, t_star, cfg), residual))
    return events


def first_return(H: Submanifold, rho: CotangentPoint, T_max: float,
                 prox_tol: float | None = None, cfg: FlowConfig | None = None,
                 direction: int = +1, cloud: ConormalCloud | None = None) -> ReturnRecord:
    """First time the trajectory of rho re-reaches the conormal cloud of H."""
    cfg = cfg or FlowConfig()
    if prox_tol is None:
        prox_tol = default_prox_tol(cfg)
    m = H.manifold
    if cloud is None:
        cloud = ConormalCloud(m, H.conormal())
    events = find_crossing_events(m, rho, cloud, T_max, prox_tol, cfg, direction)
    if not events:
        return ReturnRecord(rho, math.inf, None, math.nan, [], T_max, direction)
    t0, eta, res = events[0]
    return ReturnRecord(rho, abs(t0), eta, res, events, T_max, direction)


def all_returns(H: Submanifold, T_max: float, prox_tol: float | None = None,
                cfg: FlowConfig | None = None, density: int | None = None):
    """ReturnRecord for every conormal sample of H (forward direction)."""
    cfg = cfg or FlowConfig()
    samples = H.conormal(density)
    cloud = ConormalCloud(H.manifold, samples)
    records = []
    for i, s in enumerate(samples):
        rec = first_return(H, s.rho, T_max, prox_tol, cfg, +1, cloud)
        rec.sample_index = i
        records.append(rec)
    return records


def loop_fraction(H: Submanifold, T_max: float, prox_tol: float | None = None,
                  cfg: FlowConfig | None = None, density: int | None = None) -> float:
    """Conormal-measure fraction of directions that loop back by time T_max."""
    samples = H.conormal(density)
    records = all_returns(H, T_max, prox_tol, cfg, density)
    total = sum(s.weight for s in samples)
    looped = sum(s.weight for s, r in zip(samples, records) if r.T_H <= T_max)
    return looped / total


# -- recurrence decomposition --------------------------------------------------

@dataclass
class RecurrenceSets:
    """Index sets (into the conormal sample list) of the recurrence splitting."""

    samples: list
    e_plus: list          # per ball: indices with no forward re-entry in (T, T_hor]
    e_minus: list
    e_sets: list          # union of the two, per ball
    B: np.ndarray         # complement of the first N-1 e_sets
    groups: list          # e_sets[: N-1]
    N: int
    T: float
    T_hor: float
    inconclusive: bool
    sigma_B: float
    sigma_groups: list


def _phase_coords_batch(m: ManifoldModel, xs, xis, charts) -> np.ndarray:
    if m.is_torus:
        return np.concatenate([np.mod(xs, 1.0), xis], axis=1)
    X, V = flow_mod._sphere_embed_batch(xs, xis, charts)
    return np.concatenate([X, V], axis=1)


@dataclass
class RecurrenceScan:
    """Last ball re-entry times on a fixed grid, reusable across onsets T.

    last_entry[i, b, s] is the largest grid time in (t_floor, T_hor] at which
    conormal sample i, flowed by that time, sits inside ball b (s = 0 forward,
    s = 1 backward), or -inf when the ball is never re-entered.  The grid is
    anchored at T_hor, so decompositions at different onsets classify from the
    same event set and non-return sets stay nested in T.
    """

    T_hor: float
    t_floor: float
    dt: float
    last_entry: np.ndarray


def recurrence_scan(H: Submanifold, ball_cover, T_hor: float, t_floor: float,
                    cfg: FlowConfig | None = None) -> RecurrenceScan:
    """Sweep every conormal trajectory once against the ball cover."""
    cfg = cfg or FlowConfig()
    if not 0.0 <= t_floor < T_hor:
        raise DomainError("need 0 <= t_floor < T_hor")
    m = H.manifold
    samples = H.conormal()
    centers = np.array([geometry.phase_coords(m, c) for c, _ in ball_cover])
    radii = np.array([r for _, r in ball_cover], dtype=float)
    speed = flow_mod.phase_speed_bound(m)
    dt = min(float(np.min(radii)) / (2.0 * speed), 0.1)
    n_steps = int(math.ceil((T_hor - t_floor) / dt))
    ts = T_hor - dt * np.arange(n_steps - 1, -1, -1)   # ascending, ends at T_hor
    last = np.full((len(samples), len(ball_cover), 2), -math.inf)
    for si, sign in enumerate((+1, -1)):
        for i, s in enumerate(samples):
            xs, xis, charts = flow_mod.dense_trajectory(m, s.rho, sign * ts, cfg)
            pc = _phase_coords_batch(m, xs, xis, charts)
            d = np.linalg.norm(
                geometry.phase_delta(m, pc[:, None, :], centers[None, :, :]), axis=2)
            hit = d < radii[None, :]
            for b in np.nonzero(np.any(hit, axis=0))[0]:
                last[i, b, si] = ts[np.nonzero(hit[:, b])[0][-1]]
    return RecurrenceScan(T_hor, t_floor, dt, last)


def recurrence_decomposition(H: Submanifold, ball_cover, T: float,
                             N: int | None = None, T_hor: float | None = None,
                             cfg: FlowConfig | None = None,
                             horizon_cap: float = 50.0,
                             scan: RecurrenceScan | None = None) -> RecurrenceSets:
    """Split conormal samples by non-return behavior over (T, T_hor].

    ball_cover is a list of (CotangentPoint, radius) phase balls that must
    cover the sample cloud.  With T beyond horizon_cap the decomposition is
    flagged inconclusive: everything is placed in B and no groups are formed.
    A precomputed scan (same cover, same T_hor, t_floor <= T) lets several
    decompositions share one trajectory sweep.
    """
    cfg = cfg or FlowConfig()
    m = H.manifold
    samples = H.conormal()
    n = len(samples)
    if N is None:
        N = len(ball_cover) + 1
    if not (1 <= N <= len(ball_cover) + 1):
        raise InputError("N must lie in [1, number of balls + 1]")
    if T_hor is None:
        T_hor = 4.0 * T
    if T_hor <= T:
        raise DomainError("T_hor must exceed T")

    centers = np.array([geometry.phase_coords(m, c) for c, _ in ball_cover])
    radii = np.array([r for _, r in ball_cover], dtype=float)
    coords = np.array([geometry.phase_coords(m, s.rho) for s in samples])

    def balls_containing(c: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(geometry.phase_delta(m, centers, c[None, :]), axis=1)
        return np.nonzero(d < radii)[0]

    membership = [balls_containing(coords[i]) for i in range(n)]
    for i, mem in enumerate(membership):
        if len(mem) == 0:
            raise CoverError(f"conormal sample {i} is not covered by any ball")

    total_w = np.array([s.weight for s in samples])

    if T > horizon_cap:
        return RecurrenceSets(samples, [np.array([], dtype=int)] * len(ball_cover),
                              [np.array([], dtype=int)] * len(ball_cover),
                              [np.array([], dtype=int)] * len(ball_cover),
                              np.arange(n), [], N, T, T_hor, True,
                              float(np.sum(total_w)), [])

    if scan is None:
        scan = recurrence_scan(H, ball_cover, T_hor, T, cfg)
    if abs(scan.T_hor - T_hor) > 1e-12 or scan.t_floor > T + 1e-12:
        raise InputError("scan grid does not cover the requested window")
    if scan.last_entry.shape[:2] != (n, len(ball_cover)):
        raise InputError("scan was built for a different cover or sample set")
    lo = T + 1e-9 * max(1.0, T)
    reenter = {+1: scan.last_entry[:, :, 0] > lo,
               -1: scan.last_entry[:, :, 1] > lo}

    e_plus, e_minus, e_sets = [], [], []
    for b in range(len(ball_cover)):
        in_ball = np.array([b in membership[i] for i in range(n)])
        ep = np.nonzero(in_ball & ~reenter[+1][:, b])[0]
        em = np.nonzero(in_ball & ~reenter[-1][:, b])[0]
        e_plus.append(ep)
        e_minus.append(em)
        e_sets.append(np.union1d(ep, em))

    early = (np.zeros(0, dtype=int) if N == 1
             else np.unique(np.concatenate(e_sets[: N - 1])))
    B = np.setdiff1d(np.arange(n), early)
    groups = e_sets[: N - 1]
    return RecurrenceSets(samples, e_plus, e_minus, e_sets, B, groups, N, T,
                          T_hor, False, float(np.sum(total_w[B])),
                          [float(np.sum(total_w[g])) for g in groups])


# -- conjugate points ----------------------------------------------------------

@dataclass
class ConjugacyReport:
    events: list            # (t, multiplicity)
    window_radius: float
    t_range: tuple

    def windows(self):
        return [(t - self.window_radius, t + self.window_radius)
                for t, _ in self.events]


def conjugate_points(m: ManifoldModel, rho: CotangentPoint,
                     t_range: tuple = (0.0, 20.0), window_radius: float = 0.05,
                     cfg: FlowConfig | None = None,
                     grid_step: float = 2.5e-3) -> ConjugacyReport:
    """Zeros of the scalar Jacobi field J'' + K(gamma(t)) J = 0, J(0)=0, J'(0)=1.

    RK4 on a dense trajectory grid; each bracketed sign change is sharpened
    with the cubic Hermite interpolant of (J, J').  On surfaces every zero is
    a multiplicity-one conjugate event.
    """
    cfg = cfg or FlowConfig()
    t0, t1 = t_range
    if not (0.0 <= t0 < t1):
        raise DomainError("need 0 <= t0 < t1")
    n = int(math.ceil(t1 / grid_step))
    h = t1 / n
    ts = np.linspace(0.0, t1, 2 * n + 1)  # includes RK4 midpoints
    xs, _, charts = flow_mod.dense_trajectory(m, rho, ts, cfg)
    K = np.array([geometry.gauss_curvature(m, xs[i], int(charts[i]))
                  for i in range(len(ts))])

    J = np.empty(n + 1)
    Jp = np.empty(n + 1)
    J[0], Jp[0] = 0.0, 1.0
    for k in range(n):
        k0, km, k1v = K[2 * k], K[2 * k + 1], K[2 * k + 2]
        y, yp = J[k], Jp[k]
        a1, b1 = yp, -k0 * y
        a2, b2 = yp + 0.5 * h * b1, -km * (y + 0.5 * h * a1)
        a3, b3 = yp + 0.5 * h * b2, -km * (y + 0.5 * h * a2)
        a4, b4 = yp + h * b3, -k1v * (y + h * a3)
        J[k + 1] = y + h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        Jp[k + 1] = yp + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)

    events = []
    coarse = np.linspace(0.0, t1, n + 1)
    for k in range(n):
        # skip the structural zero at t = 0
        if coarse[k + 1] <= max(2.0 * h, 1e-6):
            continue
        if J[k] == 0.0 and coarse[k] > 0:
            events.append((float(coarse[k]), 1))
            continue
        if J[k] * J[k + 1] < 0.0:
            ta, tb = coarse[k], coarse[k + 1]
            ya, ypa, yb, ypb = J[k], Jp[k], J[k + 1], Jp[k + 1]

            def hermite(t):
                s = (t - ta) / h
                h00 = (1 + 2 * s) * (1 - s) ** 2
                h10 = s * (1 - s) ** 2
                h01 = s * s * (3 - 2 * s)
                h11 = s * s * (s - 1)
                return h00 * ya + h10 * h * ypa + h01 * yb + h11 * h * ypb

            lo_t, hi_t = ta, tb
            flo = hermite(lo_t)
            for _ in range(80):
                mid = 0.5 * (lo_t + hi_t)
                fm = hermite(mid)
                if flo * fm <= 0:
                    hi_t = mid
                else:
                    lo_t = mid
                    flo = fm
            events.append((0.5 * (lo_t + hi_t), 1))
    events = [(t, mult) for t, mult in events if t0 < t <= t1]
    return ConjugacyReport(events, window_radius, t_range)


@dataclass
class ConjugacyCertificate:
    holds: bool
    witnesses: list     # (base x, chart, direction angle, t, endpoint distance, bound)
    T: float
    T_hor: float
    decay_rate: float
    n_points: int
    n_directions: int


def conjugacy_certificate(m: ManifoldModel, base_points, T: float, decay_rate: float,
                          T_hor: float | None = None, n_directions: int = 16,
                          cfg: FlowConfig | None = None) -> ConjugacyCertificate:
    """Check the shrinking-window no-conjugacy condition past time T.

    For every base point and direction, conjugate events t_c in [T, T_hor]
    are located; a witness is any time t near t_c with |t - t_c| <= r(t) and
    endpoint distance d(x, gamma(t)) < r(t), where r(t) = exp(-a t)/a.
    """
    cfg = cfg or FlowConfig()
    if decay_rate <= 0:
        raise DomainError("decay rate must be positive")
    if T_hor is None:
        T_hor = 2.0 * T
    if T_hor <= T:
        raise DomainError("T_hor must exceed T")
    witnesses = []
    a = decay_rate

    def r_of(t):
        return math.exp(-a * t) / a

    for x, chart in base_points:
        x = np.asarray(x, dtype=float)
        for j in range(n_directions):
            alpha = (j + 0.5) * 2.0 * math.pi / n_directions
            xi = geometry.covector_from_angle(m, x, alpha, chart)
            rho = CotangentPoint(x, xi, chart)
            report = conjugate_points(m, rho, (0.0, T_hor), cfg=cfg)
            for t_c, _ in report.events:
                r_c = r_of(max(T, t_c - 1.0))
                lo = max(T, t_c - 2.0 * r_c)
                hi = min(T_hor, t_c + 2.0 * r_c)
                if lo > hi:
                    continue
                n_grid = max(9, int(math.ceil((hi - lo) / (r_of(hi) / 4.0))) + 1)
                n_grid = min(n_grid, 4000)
                for t in np.linspace(lo, hi, n_grid):
                    r_t = r_of(t)
                    if abs(t - t_c) > r_t:
                        continue
                    end = flow_mod.geodesic_flow(m, rho, float(t), cfg).p
                    d = geometry.distance(m, x, end.x, chart, end.chart)
                    if d < r_t:
                        witnesses.append((x.copy(), chart, alpha, float(t), d, r_t))
                        break
    return ConjugacyCertificate(len(witnesses) == 0, witnesses, T, T_hor,
                                decay_rate, len(base_points), n_directions)


# -- serialization -------------------------------------------------------------

RETURNS_COLUMNS = ["sample_index", "base_x1", "base_x2", "xi1", "xi2",
                   "T_H", "eta_distance_residual", "n_crossings"]


def write_returns_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RETURNS_COLUMNS)
        for i, r in enumerate(records):
            idx = r.sample_index if r.sample_index >= 0 else i
            t_str = "inf" if r.horizon_exceeded else f"{r.T_H:.17g}"
            res = r.eta_residual
            res_str = "nan" if (res != res) else f"{res:.17g}"
            w.writerow([idx,
                        f"{r.rho.x[0]:.17g}", f"{r.rho.x[1]:.17g}",
                        f"{r.rho.xi[0]:.17g}", f"{r.rho.xi[1]:.17g}",
                        t_str, res_str, len(r.crossings)])
