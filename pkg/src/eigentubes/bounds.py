"""Right-hand sides of the averaging estimates and the transversal density.

Provides flow-invariant sample measures (uniform cosphere, periodic orbit,
plane wave), the delta-thickening functional that extracts a transversal
density on the conormal bundle, and the bracket expressions whose scaling
in (R, tau, window) the experiments probe.  Unknown multiplicative constants
are never folded into numbers; reports carry them as named symbolic slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from . import flow as flow_mod
from . import geometry
from .errors import DomainError, InputError, NoConvergenceError
from .flow import FlowConfig
from .geometry import CotangentPoint, ManifoldModel
from .submanifold import Submanifold

CONSTANT_SLOTS = ("C_{n,k}", "||w||_inf")


# -- invariant measures ----------------------------------------------------------

@dataclass
class InvariantMeasure:
    kind: str
    manifold: ManifoldModel
    xs: np.ndarray
    xis: np.ndarray
    charts: np.ndarray
    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.weights)

    def point(self, i: int) -> CotangentPoint:
        return CotangentPoint(self.xs[i].copy(), self.xis[i].copy(), int(self.charts[i]))

    def coords(self) -> np.ndarray:
        m = self.manifold
        out = np.empty((len(self), geometry.phase_dim(m)))
        for i in range(len(self)):
            out[i] = geometry.phase_coords(m, self.point(i))
        if m.is_torus:
            out[:, :2] = np.mod(out[:, :2], 1.0)
        return out


def _sobol(n: int, d: int, seed: int) -> np.ndarray:
    eng = qmc.Sobol(d, scramble=True, seed=seed)
    m = max(1, math.ceil(math.log2(max(2, n))))
    return eng.random_base2(m)[:n]


def liouville_measure(m: ManifoldModel, n: int = 2 ** 14, seed: int = 0) -> InvariantMeasure:
    """Low-discrepancy sample of the normalized uniform cosphere measure."""
    if n < 8:
        raise InputError("need at least 8 sample points")
    u = _sobol(n, 3, seed)
    xs = np.empty((n, 2))
    xis = np.empty((n, 2))
    charts = np.zeros(n, dtype=int)
    w = np.ones(n)
    if m.is_torus:
        xs[:] = u[:, :2]
        alphas = 2.0 * math.pi * u[:, 2]
        for i in range(n):
            xis[i] = geometry.covector_from_angle(m, xs[i], alphas[i], 0)
        if m.amplitude != 0.0:
            # cosphere volume density sqrt(det g) = e^{2 phi}
            w = np.exp(2.0 * geometry.conformal_potential(m, xs[:, 0]))
    else:
        z = 1.0 - 2.0 * u[:, 0]          # area-uniform on the round sphere
        theta = np.arccos(np.clip(z, -1.0, 1.0))
        phi = 2.0 * math.pi * u[:, 1]
        alphas = 2.0 * math.pi * u[:, 2]
        for i in range(n):
            x_try = np.array([theta[i], phi[i]])
            if geometry.sphere_chart_ok(x_try):
                ch = 0
            else:
                ch = 1
                x_try = geometry.sphere_unembed(
                    geometry.sphere_embed(np.array([theta[i], phi[i]]), 0), 1)
            xs[i] = x_try
            charts[i] = ch
            xis[i] = geometry.covector_from_angle(m, xs[i], alphas[i], ch)
    w = w / np.sum(w)
    return InvariantMeasure("Liouville", m, xs, xis, charts, w, {"n": n, "seed": seed})


def periodic_orbit_measure(m: ManifoldModel, seed_point: CotangentPoint, period: float,
                           n: int = 2048, cfg: FlowConfig | None = None) -> InvariantMeasure:
    """Arclength-equidistributed samples along one closed flow orbit."""
    cfg = cfg or FlowConfig()
    if period <= 0:
        raise DomainError("period must be positive")
    end = flow_mod.geodesic_flow(m, seed_point, period, cfg)
    gap = float(np.linalg.norm(geometry.phase_delta(
        m, geometry.phase_coords(m, end.p)[None, :],
        geometry.phase_coords(m, seed_point)[None, :])))
    if gap > 1e-5 * max(1.0, period):
        raise InputError(f"orbit does not close: endpoint gap {gap:.2e}")
    ts = (np.arange(n) + 0.5) * (period / n)
    xs, xis, charts = flow_mod.dense_trajectory(m, seed_point, ts, cfg)
    w = np.full(n, 1.0 / n)
    return InvariantMeasure("PeriodicOrbit", m, xs, xis, charts.astype(int), w,
                            {"period": period, "n": n})


def product_delta_xi_measure(m: ManifoldModel, xi0, n: int = 2 ** 13,
                             seed: int = 0) -> InvariantMeasure:
    """Uniform base point with one fixed unit covector (flat torus only)."""
    if not m.is_torus or m.amplitude != 0.0:
        raise DomainError("plane-wave measures require the flat torus")
    xi0 = np.asarray(xi0, dtype=float)
    norm = float(np.linalg.norm(xi0))
    if norm == 0.0:
        raise InputError("xi0 must be nonzero")
    xi0 = xi0 / norm
    xs = _sobol(n, 2, seed)
    xis = np.tile(xi0, (n, 1))
    charts = np.zeros(n, dtype=int)
    w = np.full(n, 1.0 / n)
    return InvariantMeasure("ProductDeltaXi", m, xs, xis, charts, w,
                            {"xi0": tuple(xi0), "n": n})


def invariance_defect(mu: InvariantMeasure, t: float = 1.0, bins: int = 4,
                      cfg: FlowConfig | None = None) -> float:
    """Max coarse-bin mass change after pushing the samples by the flow."""
    cfg = cfg or FlowConfig()
    m = mu.manifold
    before = mu.coords()
    fx, fxi, fch = flow_mod.flow_states(m, mu.xs, mu.xis, mu.charts, t, cfg)
    after = np.empty_like(before)
    for i in range(len(fx)):
        after[i] = geometry.phase_coords(m, CotangentPoint(fx[i], fxi[i], int(fch[i])))
    if m.is_torus:
        after[:, :2] = np.mod(after[:, :2], 1.0)

    def bin_masses(coords):
        if m.is_torus:
            key_x = np.floor(np.mod(coords[:, 0], 1.0) * bins).astype(int)
            key_y = np.floor(np.mod(coords[:, 1], 1.0) * bins).astype(int)
            ang = np.mod(np.arctan2(coords[:, 3], coords[:, 2]), 2 * math.pi)
        else:
            # bin the embedded position octant-style by signs plus angle
            key_x = (coords[:, 0] > 0).astype(int)
            key_y = (coords[:, 1] > 0).astype(int) + 2 * (coords[:, 2] > 0).astype(int)
            ang = np.mod(np.arctan2(coords[:, 4], coords[:, 3]), 2 * math.pi)
        key_a = np.floor(ang / (2 * math.pi) * bins).astype(int) % bins
        key = (key_x * (bins + 4) + key_y) * bins + key_a
        out = {}
        for k, wt in zip(key, mu.weights):
            out[int(k)] = out.get(int(k), 0.0) + float(wt)
        return out

    mb = bin_masses(before)
    ma = bin_masses(after)
    keys = set(mb) | set(ma)
    return max(abs(mb.get(k, 0.0) - ma.get(k, 0.0)) for k in keys)


# -- delta-thickening ------------------------------------------------------------

def _sweep_hit_times(mu: InvariantMeasure, tree: cKDTree, prox: float,
                     ts: np.ndarray, cfg: FlowConfig) -> np.ndarray:
    """Smallest |t| (over the grid) at which each sample's orbit meets the cloud."""
    m = mu.manifold
    n = len(mu)
    best = np.full(n, np.inf)
    order = np.argsort(np.abs(ts), kind="stable")
    if m.kind == "ConformalTorus2" and m.amplitude != 0.0:
        neg = np.sort(ts[ts < 0])[::-1]
        pos = np.sort(ts[ts >= 0])
        for i in range(n):
            rows = {}
            for sub in (neg, pos):
                if len(sub) == 0:
                    continue
                xs, xis, chs = flow_mod.dense_trajectory(m, mu.point(i), sub, cfg)
                pts = np.mod(xs, 1.0)
                for k in range(len(sub)):
                    rows[float(sub[k])] = np.concatenate([pts[k], xis[k]])
            for tval, coord in rows.items():
                d, _ = tree.query(coord)
                if d < prox and abs(tval) < best[i]:
                    best[i] = abs(tval)
        return best
    remaining = np.arange(n)
    for idx in order:
        if len(remaining) == 0:
            break
        t = float(ts[idx])
        fx, fxi, fch = flow_mod.flow_states(m, mu.xs[remaining], mu.xis[remaining],
                                            mu.charts[remaining], t, cfg)
        if m.is_torus:
            coords = np.concatenate([np.mod(fx, 1.0), fxi], axis=1)
        else:
            X, V = flow_mod._sphere_embed_batch(fx, fxi, fch)
            coords = np.concatenate([X, V], axis=1)
        d, _ = tree.query(coords, distance_upper_bound=prox)
        hit = d < prox
        # ascending |t| order: a point hit now can never improve later
        best[remaining[hit]] = abs(t)
        remaining = remaining[~hit]
    return best


def thicken_measure(mu: InvariantMeasure, H: Submanifold, A=None,
                    deltas=(0.4, 0.2, 0.1), prox: float | None = None,
                    dt: float | None = None, density: int | None = None,
                    cfg: FlowConfig | None = None):
    """Transversal density of mu on the conormal set selected by predicate A.

    For each delta, measures the mass of samples whose orbit over |t| <= delta
    passes within prox of the selected conormal cloud, divides by 2 delta, and
    extrapolates the decreasing-delta sequence linearly to zero.  Returns
    (limit, estimates).
    """
    cfg = cfg or FlowConfig()
    deltas = [float(d) for d in deltas]
    if len(deltas) < 3 or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise DomainError("need at least 3 strictly decreasing thickening widths")
    if any(d <= 0 for d in deltas):
        raise DomainError("thickening widths must be positive")
    m = mu.manifold
    samples = [s for s in H.conormal(density) if A is None or A(s.rho)]
    if not samples:
        return 0.0, [0.0 for _ in deltas]
    cloud = np.array([geometry.phase_coords(m, s.rho) for s in samples])
    boxsize = geometry.phase_boxsize(m)
    if boxsize is not None:
        cloud[:, :2] = np.mod(cloud[:, :2], 1.0)
        tree = cKDTree(cloud, boxsize=boxsize)
    else:
        tree = cKDTree(cloud)
    if len(samples) > 1:
        nn = tree.query(cloud, k=2)[0][:, 1]
        spacing = float(np.max(nn))
    else:
        spacing = 0.05
    if prox is None:
        prox = max(1.5 * spacing, 1e-3)
    if dt is None:
        dt = prox / 2.0
    d_max = deltas[0]
    n_t = 2 * max(1, math.ceil(d_max / dt)) + 1
    ts = np.linspace(-d_max, d_max, n_t)
    hit_times = _sweep_hit_times(mu, tree, prox, ts, cfg)

    estimates = []
    for d in deltas:
        mass = float(np.sum(mu.weights[hit_times <= d + 1e-12]))
        estimates.append(mass / (2.0 * d))
    e_small, e_prev = estimates[-1], estimates[-2]
    scale = max(abs(e_small), abs(e_prev))
    if scale > 1e-12 and abs(e_small - e_prev) > 0.10 * scale:
        raise NoConvergenceError(
            f"thickening estimates {e_prev:.6g} -> {e_small:.6g} not settled")
    if scale <= 1e-12:
        return 0.0, estimates
    d_small, d_prev = deltas[-1], deltas[-2]
    limit = e_small + (e_small - e_prev) * d_small / (d_prev - d_small)
    return float(limit), estimates


# -- estimate right-hand sides ----------------------------------------------------

def micro1_rhs(H: Submanifold, f, A=None, density: int | None = None) -> float:
    """Quadrature of sqrt(f) over the selected conormal samples.

    The semiclassical power and the dimensional constant are reported
    separately by callers; this is the bare integral factor.
    """
    total = 0.0
    for s in H.conormal(density):
        if A is not None and not A(s.rho):
            continue
        val = float(f(s)) if callable(f) else float(f)
        if val < 0:
            raise DomainError("density must be nonnegative")
        total += s.weight * math.sqrt(val)
    return total


@dataclass
class BoundReport:
    bracket: float
    pieces: dict
    scaling_inputs: dict
    constant_slots: tuple = CONSTANT_SLOTS

    def __post_init__(self):
        gap = abs(self.bracket - sum(self.pieces.values()))
        if gap > 1e-12 * max(1.0, abs(self.bracket)):
            raise InputError("bracket does not match its pieces")


def prelim_bracket(sigma_B: float, groups) -> BoundReport:
    """sqrt(sigma_B) plus the sum of sqrt(sigma * t / T) over the groups."""
    if sigma_B < 0:
        raise DomainError("measures must be nonnegative")
    pieces = {"B": math.sqrt(sigma_B)}
    for i, (sg, t, T) in enumerate(groups):
        if sg < 0 or t < 0:
            raise DomainError("measures and times must be nonnegative")
        if t >= T:
            raise DomainError(f"group {i}: window start {t} must precede end {T}")
        pieces[f"G{i}"] = math.sqrt(sg * t / T)
    bracket = sum(pieces.values())
    return BoundReport(bracket, pieces,
                       {"h": None, "R": None, "tau": None, "n": None, "k": None})


def tube_bracket(nB: int, groups, R: float, tau: float, n: int, k: int,
                 h: float | None = None) -> BoundReport:
    """Tube-count bracket with the R^{(n-1)/2} / sqrt(tau) prefactor."""
    if nB < 0:
        raise DomainError("tube counts must be nonnegative")
    if R <= 0 or tau <= 0:
        raise DomainError("R and tau must be positive")
    pref = R ** ((n - 1) / 2.0) / math.sqrt(tau)
    pieces = {"B": pref * math.sqrt(float(nB))}
    for i, (ng, t, T) in enumerate(groups):
        if ng < 0 or t < 0:
            raise DomainError("counts and times must be nonnegative")
        if t >= T:
            raise DomainError(f"group {i}: window start {t} must precede end {T}")
        pieces[f"G{i}"] = pref * math.sqrt(float(ng) * t / T)
    bracket = sum(pieces.values())
    return BoundReport(bracket, pieces,
                       {"h": h, "R": R, "tau": tau, "n": n, "k": k})


def single_tube_bound(R: float, h: float, n: int, k: int) -> float:
    """Reference scale R^{(n-1)/2} h^{(1-k)/2} for one tube's contribution."""
    return R ** ((n - 1) / 2.0) * h ** ((1 - k) / 2.0)


BOUNDS_COLUMNS = ["h", "R", "tau", "n", "k", "bracket", "term_B", "term_groups",
                  "constant_slots"]


def write_bounds_csv(reports, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(BOUNDS_COLUMNS) + "\n")
        for rep in reports:
            si = rep.scaling_inputs
            term_b = rep.pieces.get("B", 0.0)
            term_g = sum(v for kk, v in rep.pieces.items() if kk != "B")
            cells = []
            for name in ("h", "R", "tau", "n", "k"):
                v = si.get(name)
                cells.append("" if v is None else "%.17g" % v)
            cells += ["%.17g" % rep.bracket, "%.17g" % term_b, "%.17g" % term_g,
                      "*".join(rep.constant_slots)]
            fh.write(",".join(cells) + "\n")
