"""Tube covers of conormal flow-outs and non-self-looping certificates.

A tube is the R-neighborhood (in phase coordinates) of the skeleton swept out
by flowing a small conormal patch for |t| <= tau + R.  Covers are colored so
that tubes of one color are pairwise far; window checks certify that a union
of tubes avoids its own flow image over a time window.  A hyperbolic toy map
(integer unimodular matrix on the 2-torus) provides the exactly computable
contraction mechanism on dyadic lattice masks.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import flow as flow_mod
from . import geometry
from .errors import (ColorBudgetError, CoverError, DomainError, InputError,
                     NonContractingError, TransversalityError)
from .flow import FlowConfig, ehrenfest_time
from .geometry import CotangentPoint, ManifoldModel
from .returns import ConormalCloud, find_crossing_events
from .submanifold import ConormalSample, Submanifold

COLOR_CAP_DEFAULT = 50
MIN_CONTRACTION = 1.2


# -- hyperbolic toy map --------------------------------------------------------

@dataclass(frozen=True)
class HyperbolicToyMap:
    matrix: tuple

    def __post_init__(self):
        M = np.asarray(self.matrix)
        if M.shape != (2, 2) or not np.all(M == np.round(M)):
            raise InputError("toy map needs a 2x2 integer matrix")
        det = round(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0])
        if abs(det) != 1:
            raise InputError("toy map must be unimodular")
        if abs(M[0, 0] + M[1, 1]) <= 2:
            raise InputError("toy map must be hyperbolic (|trace| > 2)")
        object.__setattr__(self, "matrix", tuple(tuple(int(v) for v in row) for row in M))

    def as_array(self) -> np.ndarray:
        return np.array(self.matrix, dtype=np.int64)

    def eigensystem(self):
        vals, vecs = np.linalg.eig(self.as_array().astype(float))
        order = np.argsort(np.abs(vals))
        lam_s, lam_u = vals[order[0]].real, vals[order[1]].real
        v_s = vecs[:, order[0]].real
        v_u = vecs[:, order[1]].real
        return lam_s, v_s / np.linalg.norm(v_s), lam_u, v_u / np.linalg.norm(v_u)

    def expansion_rate(self) -> float:
        _, _, lam_u, _ = self.eigensystem()
        return math.log(abs(lam_u))

    def stable_left_vector(self) -> np.ndarray:
        """Left eigenvector for the contracting eigenvalue (projection form)."""
        lam_s, _, _, _ = self.eigensystem()
        vals, vecs = np.linalg.eig(self.as_array().astype(float).T)
        idx = int(np.argmin(np.abs(vals - lam_s)))
        w = vecs[:, idx].real
        return w / np.linalg.norm(w)

    def apply_points(self, pts: np.ndarray, t: int = 1) -> np.ndarray:
        M = np.linalg.matrix_power(self.as_array(), abs(int(t)))
        if t < 0:
            M = _int_inverse_power(self.as_array(), -int(t))
        return np.mod(pts @ M.T.astype(float), 1.0)


def _int_inverse_power(M: np.ndarray, k: int) -> np.ndarray:
    det = int(round(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]))
    inv = det * np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]], dtype=np.int64)
    return np.linalg.matrix_power(inv, k)


_PERM_CACHE: dict = {}


def _one_step_perm(toy: HyperbolicToyMap, N: int, inverse: bool = False) -> np.ndarray:
    """Flat scatter indices: out[perm] = mask moves every cell by the map."""
    key = (toy.matrix, N, inverse)
    if key not in _PERM_CACHE:
        M = _int_inverse_power(toy.as_array(), 1) if inverse else toy.as_array()
        i, j = np.meshgrid(np.arange(N, dtype=np.int64),
                           np.arange(N, dtype=np.int64), indexing="ij")
        ip = np.mod(M[0, 0] * i + M[0, 1] * j, N)
        jp = np.mod(M[1, 0] * i + M[1, 1] * j, N)
        _PERM_CACHE[key] = (ip * N + jp).ravel()
    return _PERM_CACHE[key]


def transport_mask(toy: HyperbolicToyMap, mask: np.ndarray, t: int = 1) -> np.ndarray:
    """Exact image of a lattice-cell mask under the map iterated t times."""
    N = mask.shape[0]
    perm = _one_step_perm(toy, N, inverse=t < 0)
    flat = mask.ravel()
    out = flat
    for _ in range(abs(int(t))):
        nxt = np.zeros_like(out)
        nxt[perm] = out
        out = nxt
    return out.reshape(N, N)


def stable_rectangle(toy: HyperbolicToyMap, center, half_stable: float,
                     half_unstable: float, resolution: int = 12) -> np.ndarray:
    """Mask of lattice points inside an eigenbasis-aligned rectangle."""
    N = 1 << resolution
    _, v_s, _, v_u = toy.eigensystem()
    E = np.column_stack([v_s, v_u])
    Einv = np.linalg.inv(E)
    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    d = np.stack([i / N - center[0], j / N - center[1]], axis=-1)
    d -= np.round(d)
    comps = d @ Einv.T
    return (np.abs(comps[..., 0]) <= half_stable) & (np.abs(comps[..., 1]) <= half_unstable)


def ball_mask(center, radius: float, resolution: int = 12) -> np.ndarray:
    N = 1 << resolution
    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    d = np.stack([i / N - center[0], j / N - center[1]], axis=-1)
    d -= np.round(d)
    return np.einsum("ijk,ijk->ij", d, d) <= radius * radius


def _check_contracting(toy: HyperbolicToyMap, mask: np.ndarray, rng) -> None:
    """Verify the map contracts stable separations of actual mask cells."""
    N = mask.shape[0]
    w = toy.stable_left_vector()
    cells = np.argwhere(mask)
    if len(cells) < 2:
        raise NonContractingError("set too small to exhibit contraction")
    take = min(len(cells), 4000)
    sel = cells[rng.choice(len(cells), size=take, replace=False)]
    pts = sel / N
    tree = cKDTree(pts, boxsize=[1.0, 1.0])
    pairs = list(tree.query_pairs(8.0 / N))
    factors = []
    for a, b in pairs:
        d = pts[a] - pts[b]
        d -= np.round(d)
        before = abs(float(d @ w))
        if before < 2.0 / N:
            continue
        d2 = d @ toy.as_array().T.astype(float)
        after = abs(float(d2 @ w))
        if after > 0:
            factors.append(before / after)
    if not factors:
        raise NonContractingError("stable-direction extent below lattice resolution")
    if float(np.median(factors)) < MIN_CONTRACTION:
        raise NonContractingError(
            f"median stable contraction {np.median(factors):.3f} < {MIN_CONTRACTION}")


@dataclass
class MaskGroup:
    mask: np.ndarray
    t0: float
    T1: float
    measure: float


@dataclass
class ContractionResult:
    B_mask: np.ndarray
    groups: list
    sigma0: float
    residual: float
    resolution: int
    t0: int
    T: int
    eps: float

    @property
    def windows(self):
        return [(g.t0, g.T1) for g in self.groups]


def contraction_partition(toy: HyperbolicToyMap, A0: np.ndarray, t0: int, T: int,
                          eps: float, seed: int = 0) -> ContractionResult:
    """Iterated window-halving split of A0 into non-returning groups.

    Level l removes G_l = A_l minus the points of A_l whose orbit re-enters
    A_l during [t0, T/2^l]; the remainder feeds the next level.  Stops when
    the residual measure drops below eps * measure(A0) or the window would
    shrink past [t0, 2 t0].
    """
    if t0 < 1 or T < t0:
        raise DomainError("need integer times 1 <= t0 <= T")
    if not (0.0 < eps <= 1.0):
        raise DomainError("eps must lie in (0, 1]")
    A0 = np.asarray(A0, dtype=bool)
    N = A0.shape[0]
    if A0.shape != (N, N) or N & (N - 1):
        raise InputError("mask must be square with power-of-two size")
    resolution = int(round(math.log2(N)))
    rng = np.random.default_rng(seed)
    _check_contracting(toy, A0, rng)

    sigma0 = float(np.count_nonzero(A0)) / (N * N)
    if sigma0 == 0.0:
        raise InputError("empty starting set")
    A = A0.copy()
    Tl = int(T)
    groups = []
    while True:
        B = np.zeros_like(A)
        cur = A.copy()
        for t in range(1, Tl + 1):
            cur = transport_mask(toy, cur, 1)
            if t >= t0:
                B |= cur & A
        G = A & ~B
        groups.append(MaskGroup(G, float(t0), float(Tl),
                                float(np.count_nonzero(G)) / (N * N)))
        A = B
        residual = float(np.count_nonzero(A)) / (N * N)
        Tl //= 2
        if residual <= eps * sigma0 or Tl < 2 * t0:
            break
    return ContractionResult(A, groups, sigma0, residual, resolution,
                             int(t0), int(T), float(eps))


# -- tubes and covers ----------------------------------------------------------

@dataclass
class Tube:
    index: int
    center: ConormalSample
    radius: float
    tau: float
    seed_ids: list
    xs: np.ndarray        # skeleton base points (npts, 2)
    xis: np.ndarray
    charts: np.ndarray
    coords: np.ndarray    # phase coordinates of the skeleton
    color: int = -1
    _tree: object = field(default=None, repr=False)

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.coords)
        return self._tree

    def min_distance(self, coords: np.ndarray, m: ManifoldModel) -> float:
        d = geometry.phase_delta(m, self.coords, coords[None, :])
        return float(np.min(np.linalg.norm(d, axis=1)))


@dataclass
class Cover:
    manifold: ManifoldModel
    submanifold: Submanifold
    tubes: list
    radius: float
    tau: float
    samples: list
    center_indices: list
    n_colors: int

    def tubes_containing(self, coords: np.ndarray) -> list:
        return [t.index for t in self.tubes
                if t.min_distance(coords, self.manifold) < self.radius]


def _seed_shrink_radius(R: float, tau: float) -> float:
    # keeps the swept skeleton within R of the center trajectory under the
    # worst tangent-map spread sqrt(1 + t^2) of the model family
    return R / math.sqrt(1.0 + (tau + R) ** 2)


def _skeleton(m: ManifoldModel, seeds, tau: float, R: float, cfg: FlowConfig):
    n_t = 2 * max(4, math.ceil((tau + R) / (R / 4.0))) + 1
    ts = np.linspace(-(tau + R), tau + R, n_t)
    xs0 = np.array([s.rho.x for s in seeds])
    xis0 = np.array([s.rho.xi for s in seeds])
    ch0 = np.array([s.rho.chart for s in seeds])
    exact = m.kind in ("FlatTorus2", "Sphere2") or m.amplitude == 0.0
    all_x, all_xi, all_ch = [], [], []
    if exact:
        for t in ts:
            fx, fxi, fch = flow_mod.flow_states(m, xs0, xis0, ch0, float(t))
            all_x.append(fx)
            all_xi.append(fxi)
            all_ch.append(fch)
    else:
        neg = ts[ts < 0][::-1]
        pos = ts[ts >= 0]
        per_seed = []
        for s in seeds:
            rows = {}
            for sub in (neg, pos):
                if len(sub) == 0:
                    continue
                xs, xis, chs = flow_mod.dense_trajectory(m, s.rho, sub, cfg)
                for k, t in enumerate(sub):
                    rows[float(t)] = (xs[k], xis[k], chs[k])
            per_seed.append(rows)
        for t in ts:
            fx = np.array([per_seed[i][float(t)][0] for i in range(len(seeds))])
            fxi = np.array([per_seed[i][float(t)][1] for i in range(len(seeds))])
            fch = np.array([per_seed[i][float(t)][2] for i in range(len(seeds))])
            all_x.append(fx)
            all_xi.append(fxi)
            all_ch.append(fch)
    xs = np.concatenate(all_x)
    xis = np.concatenate(all_xi)
    charts = np.concatenate(all_ch).astype(int)
    coords = np.empty((len(xs), geometry.phase_dim(m)))
    for i in range(len(xs)):
        coords[i] = geometry.phase_coords(m, CotangentPoint(xs[i], xis[i], int(charts[i])))
    if m.is_torus:
        coords[:, :2] = np.mod(coords[:, :2], 1.0)
    return xs, xis, charts, coords, ts


def build_cover(H: Submanifold, tau: float, R: float, h: float | None = None,
                delta: float | None = None, color_cap: int = COLOR_CAP_DEFAULT,
                cfg: FlowConfig | None = None, density: int | None = None) -> Cover:
    """Cover the conormal samples of H by colored tubes of radius R.

    Centers are a maximal R/2-separated subset of the samples (greedy in
    index order).  Each tube's skeleton merges the trajectories of all
    samples within the shrunken seed radius, so the swept set stays within
    R(1 + 1e-3) of the center trajectory.
    """
    cfg = cfg or FlowConfig()
    if not (0.0 < R < 1.0):
        raise DomainError("tube radius must lie in (0, 1)")
    if tau <= 0.0:
        raise DomainError("tau must be positive")
    if h is not None:
        if delta is None or not (0.0 < delta < 1.0):
            raise DomainError("delta must lie in (0, 1) when h is given")
        if R < 5.0 * h ** delta:
            raise DomainError(f"radius {R} below the scale floor 5 h^delta")
    m = H.manifold
    samples = H.conormal(density)
    coords = np.array([geometry.phase_coords(m, s.rho) for s in samples])

    center_ids: list[int] = []
    for i in range(len(samples)):
        ok = True
        for j in center_ids:
            d = geometry.phase_delta(m, coords[i], coords[j])
            if float(np.linalg.norm(d)) < R / 2.0:
                ok = False
                break
        if ok:
            center_ids.append(i)

    r_seed = _seed_shrink_radius(R, tau)
    tubes = []
    for k, ci in enumerate(center_ids):
        d = np.linalg.norm(geometry.phase_delta(m, coords, coords[ci][None, :]), axis=1)
        seed_ids = list(np.nonzero(d <= r_seed)[0])
        seeds = [samples[j] for j in seed_ids]
        xs, xis, charts, sk_coords, ts = _skeleton(m, seeds, tau, R, cfg)
        tubes.append(Tube(k, samples[ci], R, tau, seed_ids, xs, xis, charts, sk_coords))

    # coherence: skeleton points stay within R(1+1e-3) of the center trajectory
    boxsize = geometry.phase_boxsize(m)
    for tube in tubes:
        center_only = [tube.center]
        cx, cxi, cch, c_coords, _ = _skeleton(m, center_only, tau, R * 1.001, cfg)
        if boxsize is not None:
            c_pts = c_coords.copy()
            c_pts[:, :2] = np.mod(c_pts[:, :2], 1.0)
            ctree = cKDTree(c_pts, boxsize=boxsize)
            q_pts = tube.coords.copy()
            q_pts[:, :2] = np.mod(q_pts[:, :2], 1.0)
        else:
            ctree = cKDTree(c_coords)
            q_pts = tube.coords
        dmax = float(np.max(ctree.query(q_pts)[0]))
        slack = R / 8.0  # center polyline is sampled, not continuous
        if dmax > R * (1.0 + 1e-3) + slack:
            raise CoverError(f"tube {tube.index} skeleton strays {dmax} from its center")

    # conflict graph: tubes whose skeletons come within 2R
    n = len(tubes)
    conflicts = [set() for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            ci = geometry.phase_delta(m, tubes[i].coords[:1], tubes[j].coords[:1])
            reach = 2.0 * (tau + R) * flow_mod.phase_speed_bound(m) + 4.0 * R
            if float(np.linalg.norm(ci)) > 2.0 * reach:
                continue
            dmin = np.inf
            tj = tubes[j].tree()
            if m.is_torus:
                # wrapped query: tile the query points over the 9 shifts
                for sx in (-1.0, 0.0, 1.0):
                    for sy in (-1.0, 0.0, 1.0):
                        q = tubes[i].coords.copy()
                        q[:, 0] += sx
                        q[:, 1] += sy
                        dmin = min(dmin, float(np.min(tj.query(q)[0])))
            else:
                dmin = float(np.min(tj.query(tubes[i].coords)[0]))
            if dmin < 2.0 * R:
                conflicts[i].add(j)
                conflicts[j].add(i)

    for tube in tubes:
        used = {tubes[j].color for j in conflicts[tube.index] if tubes[j].color >= 0}
        color = 0
        while color in used:
            color += 1
        if color >= color_cap:
            raise ColorBudgetError(f"needed more than {color_cap} tube colors")
        tube.color = color
    n_colors = 1 + max(t.color for t in tubes)

    cover = Cover(m, H, tubes, R, tau, samples, center_ids, n_colors)
    # completeness: every sample sits in at least one tube
    for i in range(len(samples)):
        near = min(float(np.linalg.norm(geometry.phase_delta(m, coords[i], coords[ci])))
                   for ci in center_ids)
        if near > R / 2.0 + 1e-12:
            raise CoverError(f"sample {i} not within R/2 of any tube center")
    return cover


@dataclass
class WindowCheck:
    certified: bool
    t0: float
    T1: float
    direction: int
    violation_time: float | None
    violation_distance: float | None
    step: float
    n_points: int


def check_window(cover: Cover, indices, t0: float, T1: float,
                 direction: int = +1, cfg: FlowConfig | None = None) -> WindowCheck:
    """Certify that the flowed union of the listed tubes avoids its own skeleton.

    Slides the union skeleton over s in [t0, T1] (sign from direction) at a
    step fine enough that no approach below the tube radius can be skipped;
    any flowed point within R of the static union skeleton is a violation.
    """
    cfg = cfg or FlowConfig()
    if not (0.0 <= t0 < T1):
        raise DomainError("need 0 <= t0 < T1")
    indices = list(indices)
    m = cover.manifold
    R = cover.radius
    if not indices:
        return WindowCheck(True, t0, T1, direction, None, None, 0.0, 0)
    xs = np.concatenate([cover.tubes[i].xs for i in indices])
    xis = np.concatenate([cover.tubes[i].xis for i in indices])
    charts = np.concatenate([cover.tubes[i].charts for i in indices])
    coords = np.concatenate([cover.tubes[i].coords for i in indices])
    boxsize = geometry.phase_boxsize(m)
    if boxsize is not None:
        pts = coords.copy()
        pts[:, :2] = np.mod(pts[:, :2], 1.0)
        tree = cKDTree(pts, boxsize=boxsize)
    else:
        tree = cKDTree(coords)
    speed = flow_mod.phase_speed_bound(m)
    step = R / (2.0 * speed)
    n_s = int(math.ceil((T1 - t0) / step)) + 1
    for s in np.linspace(t0, T1, n_s):
        fx, fxi, fch = flow_mod.flow_states(m, xs, xis, charts,
                                            float(direction) * float(s), cfg)
        fc = np.empty_like(coords)
        for i in range(len(fx)):
            fc[i] = geometry.phase_coords(m, CotangentPoint(fx[i], fxi[i], int(fch[i])))
        if m.is_torus:
            fc[:, :2] = np.mod(fc[:, :2], 1.0)
        d, _ = tree.query(fc)
        dmin = float(np.min(d))
        if dmin < R:
            return WindowCheck(False, t0, T1, direction, float(s), dmin,
                               step, len(coords))
    return WindowCheck(True, t0, T1, direction, None, None, step, len(coords))


# -- rotation-type splitting ----------------------------------------------------

@dataclass
class RotationSplit:
    events: list               # (seed index, t, landing point, residual, angle)
    intersecting: list         # tube indices covering the events
    complement: list
    window_check: WindowCheck | None
    certified: bool
    side: int
    cover: Cover


def _conormal_tangent(H: Submanifold, samples, idx: int) -> np.ndarray:
    """Chart-coordinate tangent of the conormal sample family at one sample."""
    s = samples[idx]
    m = H.manifold
    if H.kind == "Point":
        md = geometry.metric_at(m, s.rho.x, s.rho.chart)
        a = s.param
        dxi = np.array([-math.sqrt(md.g[0, 0]) * math.sin(a),
                        math.sqrt(md.g[1, 1]) * math.cos(a)])
        return np.concatenate([np.zeros(2), dxi])
    # same-branch neighbor difference
    others = [j for j, o in enumerate(samples)
              if o.branch == s.branch and j != idx and o.rho.chart == s.rho.chart]
    if not others:
        raise InputError("cannot form a conormal tangent from one sample")
    j = min(others, key=lambda j: abs(samples[j].param - s.param))
    o = samples[j]
    ds = o.param - s.param
    dx = o.rho.x - s.rho.x
    dx -= np.round(dx) if H.manifold.is_torus else 0.0
    v = np.concatenate([dx, o.rho.xi - s.rho.xi]) / ds
    return v


def _hamilton_field(m: ManifoldModel, p: CotangentPoint) -> np.ndarray:
    md = geometry.metric_at(m, p.x, p.chart)
    xdot = md.g_inv @ p.xi
    # xidot_k = -1/2 d_k(g^{ij}) xi_i xi_j via finite difference of the inverse metric
    eps = 1e-6
    xidot = np.empty(2)
    for k in range(2):
        xp = p.x.copy()
        xm = p.x.copy()
        xp[k] += eps
        xm[k] -= eps
        gp = geometry.metric_at(m, xp, p.chart).g_inv
        gm = geometry.metric_at(m, xm, p.chart).g_inv
        xidot[k] = -0.5 * float(p.xi @ ((gp - gm) / (2 * eps)) @ p.xi)
    return np.concatenate([xdot, xidot])


def rotation_partition(H: Submanifold, rho: CotangentPoint, t_window,
                       R: float, tau: float | None = None,
                       angle_threshold: float = 0.1,
                       cfg: FlowConfig | None = None) -> RotationSplit:
    """Split a cover by the flowed-ball intersection events inside a window.

    Flows the conormal ball around rho across [t0, T1], locates proximity
    events with the conormal cloud, requires transversality (principal angle
    above threshold) at every event, covers the events by tubes and certifies
    the complement with a window check (forward, then backward).
    """
    cfg = cfg or FlowConfig()
    t0, T1 = float(t_window[0]), float(t_window[1])
    if not (0.0 <= t0 < T1):
        raise DomainError("need 0 <= t0 < T1 in the window")
    if tau is None:
        tau = R
    m = H.manifold
    samples = H.conormal()
    cloud = ConormalCloud(m, samples)
    coords = np.array([geometry.phase_coords(m, s.rho) for s in samples])
    c0 = geometry.phase_coords(m, rho)
    ball_ids = list(np.nonzero(
        np.linalg.norm(geometry.phase_delta(m, coords, c0[None, :]), axis=1) < R)[0])
    if not ball_ids:
        raise InputError("no conormal samples inside the starting ball")

    events = []
    for i in ball_ids:
        evs = find_crossing_events(m, samples[i].rho, cloud, T1, R, cfg, +1)
        for t_star, pt, res in evs:
            if t_star < t0:
                continue
            jac = flow_mod.tangent_flow(m, samples[i].rho, t_star, cfg)
            v = _conormal_tangent(H, samples, i)
            w = jac @ v
            # landing-side subspace: conormal tangent at the nearest sample + flow
            land_c = geometry.phase_coords(m, pt)
            if m.is_torus:
                land_c = land_c.copy()
                land_c[:2] = np.mod(land_c[:2], 1.0)
            _, near_idx = cloud.distance(land_c[None, :])
            u1 = _conormal_tangent(H, samples, int(near_idx[0]))
            u2 = _hamilton_field(m, pt)
            Q, _ = np.linalg.qr(np.column_stack([u1, u2]))
            resid = w - Q @ (Q.T @ w)
            angle = math.asin(min(1.0, float(np.linalg.norm(resid) / np.linalg.norm(w))))
            if angle < angle_threshold:
                raise TransversalityError(
                    f"principal angle {angle:.4f} below {angle_threshold} at t={t_star:.4f}")
            events.append((i, t_star, pt, res, angle))

    cover = build_cover(H, tau, R, cfg=cfg)
    hit = set()
    for _, _, pt, _, _ in events:
        c = geometry.phase_coords(m, pt)
        if m.is_torus:
            c = c.copy()
            c[:2] = np.mod(c[:2], 1.0)
        hit.update(cover.tubes_containing(c))
    complement = [t.index for t in cover.tubes if t.index not in hit]

    check = check_window(cover, complement, t0, T1, +1, cfg)
    side = +1
    if not check.certified:
        back = check_window(cover, complement, t0, T1, -1, cfg)
        if back.certified:
            check, side = back, -1
    return RotationSplit(events, sorted(hit), complement, check,
                         check.certified, side, cover)


# -- partition certificates ------------------------------------------------------

@dataclass
class GroupRecord:
    t0: float
    T1: float
    direction: int
    measure: float
    tube_indices: list | None = None
    mask: np.ndarray | None = None


@dataclass
class PartitionCertificate:
    kind: str                       # "tubes" | "catmap"
    h: float
    alpha: float
    expansion_rate: float
    B_measure: float
    groups: list
    B_indices: list | None = None
    B_mask: np.ndarray | None = None
    R: float | None = None
    tau: float | None = None
    delta: float | None = None
    resolution: int | None = None
    map_matrix: tuple | None = None
    extra: dict = field(default_factory=dict)

    def window_budget(self) -> float:
        return 2.0 * self.alpha * ehrenfest_time(self.h, self.expansion_rate)

    def validate_windows(self) -> bool:
        budget = self.window_budget()
        return all(g.T1 <= budget + 1e-12 for g in self.groups)


def _mask_payload(mask: np.ndarray) -> dict:
    packed = np.packbits(mask.astype(np.uint8))
    raw = packed.tobytes()
    return {
        "shape": list(mask.shape),
        "bits": base64.b64encode(raw).decode("ascii"),
        "sha256": hashlib.sha256(raw).hexdigest(),
        "count": int(np.count_nonzero(mask)),
    }


def _mask_from_payload(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["bits"])
    if hashlib.sha256(raw).hexdigest() != d["sha256"]:
        raise InputError("mask payload checksum mismatch")
    shape = tuple(d["shape"])
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
    return bits[: shape[0] * shape[1]].reshape(shape).astype(bool)


def certificate_to_tree(cert: PartitionCertificate) -> dict:
    groups = []
    for g in cert.groups:
        rec = {"t0": g.t0, "T1": g.T1, "direction": g.direction, "measure": g.measure}
        if g.tube_indices is not None:
            rec["tube_indices"] = [int(i) for i in g.tube_indices]
        if g.mask is not None:
            rec["mask"] = _mask_payload(g.mask)
        groups.append(rec)
    tree = {
        "schema": "partition-certificate-1",
        "kind": cert.kind,
        "h": cert.h,
        "alpha": cert.alpha,
        "expansion_rate": cert.expansion_rate,
        "window_budget": cert.window_budget(),
        "B_measure": cert.B_measure,
        "groups": groups,
        "extra": cert.extra,
    }
    if cert.B_indices is not None:
        tree["B_indices"] = [int(i) for i in cert.B_indices]
    if cert.B_mask is not None:
        tree["B_mask"] = _mask_payload(cert.B_mask)
    for name in ("R", "tau", "delta", "resolution"):
        v = getattr(cert, name)
        if v is not None:
            tree[name] = v
    if cert.map_matrix is not None:
        tree["map_matrix"] = [list(row) for row in cert.map_matrix]
    return tree


def write_certificate(cert: PartitionCertificate, path) -> dict:
    tree = certificate_to_tree(cert)
    with open(path, "w") as fh:
        json.dump(tree, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return tree


def load_certificate(path) -> PartitionCertificate:
    with open(path) as fh:
        tree = json.load(fh)
    if tree.get("schema") != "partition-certificate-1":
        raise InputError("not a partition certificate file")
    groups = []
    for g in tree["groups"]:
        groups.append(GroupRecord(
            g["t0"], g["T1"], g["direction"], g["measure"],
            g.get("tube_indices"),
            _mask_from_payload(g["mask"]) if "mask" in g else None))
    return PartitionCertificate(
        kind=tree["kind"], h=tree["h"], alpha=tree["alpha"],
        expansion_rate=tree["expansion_rate"], B_measure=tree["B_measure"],
        groups=groups, B_indices=tree.get("B_indices"),
        B_mask=_mask_from_payload(tree["B_mask"]) if "B_mask" in tree else None,
        R=tree.get("R"), tau=tree.get("tau"), delta=tree.get("delta"),
        resolution=tree.get("resolution"),
        map_matrix=tuple(tuple(r) for r in tree["map_matrix"]) if "map_matrix" in tree else None,
        extra=tree.get("extra", {}))


def verify_catmap_certificate(cert: PartitionCertificate) -> bool:
    """Recompute every group's non-return property from the stored masks."""
    if cert.kind != "catmap" or cert.map_matrix is None:
        raise InputError("not a toy-map certificate")
    toy = HyperbolicToyMap(cert.map_matrix)
    if not cert.validate_windows():
        return False
    for g in cert.groups:
        if g.mask is None:
            return False
        cur = g.mask.copy()
        for t in range(1, int(round(g.T1)) + 1):
            cur = transport_mask(toy, cur, 1)
            if t >= int(round(g.t0)) and bool(np.any(cur & g.mask)):
                return False
    return True


def verify_tube_certificate(cert: PartitionCertificate, cover: Cover,
                            cfg: FlowConfig | None = None) -> bool:
    if cert.kind != "tubes":
        raise InputError("not a tube certificate")
    if not cert.validate_windows():
        return False
    for g in cert.groups:
        if g.tube_indices is None:
            return False
        chk = check_window(cover, g.tube_indices, g.t0, g.T1, g.direction, cfg)
        if not chk.certified:
            return False
    return True
