"""Discrete semiclassical quantization on the flat torus.

Fields live on an N x N grid over the unit square; symbols live on windowed
4-d lattices in (position, frequency) snapped to a common global spacing so
interpolants of different tube symbols agree.  Quantization uses a low-rank
separable split of the symbol (SVD across the position/frequency reshape)
composed symmetrically with grid Fourier multipliers, which keeps real
symbols self-adjoint and memory linear in the rank.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import geometry
from .errors import (AssertionFailure, CertificateMissingError, DomainError,
                     InputError, RankCapError, ResolutionError)

RANK_CAP = 32
RANK_TOL = 1e-6
HEADER_MAGIC = b"ETGRID01"


# -- grid fields -----------------------------------------------------------------

@dataclass
class GridField:
    values: np.ndarray
    h: float
    N: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InputError("field values must be a square grid")
        N = v.shape[0]
        if N & (N - 1):
            raise InputError("grid side must be a power of two")
        if not (0.0 < self.h < 1.0):
            raise DomainError("h must lie in (0, 1)")
        # >= 8 nodes per oscillation wavelength 2 pi h
        if N < 4.0 / (math.pi * self.h):
            raise ResolutionError(
                f"grid side {N} cannot resolve oscillation at h={self.h}")
        self.values = v
        self.N = N


def grid_axis(N: int) -> np.ndarray:
    return np.arange(N) / N


def lattice_mode_field(m, h: float, N: int) -> GridField:
    """Grid restriction of the lattice exponential with wave vector m."""
    mv = np.asarray(m, dtype=float)
    x = grid_axis(N)
    phase = np.add.outer(mv[0] * x, mv[1] * x)
    return GridField(np.exp(2j * math.pi * phase), h)


def field_norm(u: GridField) -> float:
    return math.sqrt(float(np.sum(np.abs(u.values) ** 2)) / u.N ** 2)


def field_inner(u: GridField, v: GridField) -> complex:
    if u.N != v.N:
        raise InputError("incompatible grids")
    return complex(np.sum(u.values * np.conj(v.values)) / u.N ** 2)


def frequency_nodes(h: float, N: int) -> np.ndarray:
    """Semiclassical frequencies of the DFT modes, fftfreq order."""
    return 2.0 * math.pi * h * np.fft.fftfreq(N, d=1.0 / N)


# -- symbol grids ----------------------------------------------------------------

@dataclass
class SymbolGrid:
    x1: np.ndarray
    x2: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    values: np.ndarray
    delta: float
    tube_ref: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (len(self.x1), len(self.x2), len(self.xi1), len(self.xi2))
        if self.values.shape != shape:
            raise InputError("symbol values do not match the axis lattice")

    def axes(self):
        return (self.x1, self.x2, self.xi1, self.xi2)

    def spacing(self, axis: int) -> float:
        ax = self.axes()[axis]
        return float(ax[1] - ax[0]) if len(ax) > 1 else 1.0

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _axis_window(lo: float, hi: float, g: float, periodic: bool) -> np.ndarray:
    """Lattice nodes at multiples of g covering [lo, hi] (capped at one period)."""
    if periodic and hi - lo >= 1.0 - g:
        n = max(2, int(round(1.0 / g)))
        return np.arange(n) * (1.0 / n)
    i0 = math.floor(lo / g)
    i1 = math.ceil(hi / g)
    return np.arange(i0, i1 + 1) * g


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def cutoff_profile(d, R: float):
    """Plateau-1 profile: flat to 0.3R, smooth descent over R/4, zero past 0.55R."""
    return 1.0 - _smoothstep((np.asarray(d) - 0.3 * R) / (0.25 * R))


def tube_cutoff(tube, h: float, delta: float, spacing: float | None = None) -> SymbolGrid:
    """Smoothed indicator of the tube's phase-space neighborhood.

    Nodes sit on the global lattice of the given spacing (default R/8), the
    window padded 0.7R past the skeleton's bounding box per axis.  Values are
    the mollified-distance profile, so the symbol vanishes outside the
    R-fattened skeleton and its finite differences meet the symbol-class
    bounds whenever R stays above the 5 h^delta floor.
    """
    R = tube.radius
    if not (0.0 < delta < 1.0):
        raise DomainError("delta must lie in (0, 1)")
    if R < 5.0 * h ** delta:
        raise DomainError(f"tube radius {R} below the symbol-class floor 5 h^delta")
    coords = tube.coords
    if coords.shape[1] != 4:
        raise InputError("tube cutoffs require flat-torus phase coordinates")
    g = spacing if spacing is not None else 1.0 / max(8, round(8.0 / R))
    pad = 0.7 * R
    # unwrap x coordinates around the first skeleton point before boxing
    ref = coords[0, :2]
    dx = coords[:, :2] - ref
    dx -= np.round(dx)
    xs = ref + dx
    axes = []
    for a in range(2):
        axes.append(_axis_window(float(np.min(xs[:, a])) - pad,
                                 float(np.max(xs[:, a])) + pad, g, True))
    for a in range(2):
        axes.append(_axis_window(float(np.min(coords[:, 2 + a])) - pad,
                                 float(np.max(coords[:, 2 + a])) + pad, g, False))
    x1, x2, xi1, xi2 = axes
    G1, G2, G3, G4 = np.meshgrid(x1, x2, xi1, xi2, indexing="ij")
    nodes = np.stack([np.mod(G1, 1.0).ravel(), np.mod(G2, 1.0).ravel(),
                      G3.ravel(), G4.ravel()], axis=-1)
    cloud = coords.copy()
    cloud[:, :2] = np.mod(cloud[:, :2], 1.0)
    pts = cloud.copy()
    tree = cKDTree(pts, boxsize=[1.0, 1.0, 0.0, 0.0])
    d, _ = tree.query(nodes)
    vals = cutoff_profile(d.reshape(len(x1), len(x2), len(xi1), len(xi2)), R)
    vals[vals < 1e-12] = 0.0
    return SymbolGrid(x1, x2, xi1, xi2, vals, delta, tube_ref=tube.index,
                      meta={"R": R, "h": h, "spacing": g})


def s_delta_margin(sym: SymbolGrid, h: float, bound_const: float = 10.0) -> float:
    """Smallest ratio of the symbol-class bound to measured finite differences.

    Checks first and second differences along every axis; a margin >= 1 means
    the grid symbol sits inside the class with constant bound_const.
    """
    worst = math.inf
    for axis in range(4):
        sp = sym.spacing(axis)
        d1 = np.abs(np.diff(sym.values, axis=axis))
        if d1.size == 0:
            continue
        a1 = float(np.max(d1))
        b1 = bound_const * h ** (-sym.delta) * sp
        if a1 > 0:
            worst = min(worst, b1 / a1)
        d2 = np.abs(np.diff(sym.values, n=2, axis=axis)) if sym.values.shape[axis] > 2 else None
        if d2 is not None and d2.size:
            a2 = float(np.max(d2))
            b2 = bound_const * h ** (-2 * sym.delta) * sp ** 2
            if a2 > 0:
                worst = min(worst, b2 / a2)
    return worst


def constant_symbol(value: float, h: float, N: int, delta: float = 0.0) -> SymbolGrid:
    """Symbol equal to a constant across the whole field phase space."""
    xi_max = float(np.max(np.abs(frequency_nodes(h, N)))) * 1.01 + 1e-9
    x_nodes = np.arange(3) / 3.0
    xi_nodes = np.linspace(-xi_max, xi_max, 5)
    vals = np.full((3, 3, 5, 5), float(value))
    return SymbolGrid(x_nodes, x_nodes.copy(), xi_nodes, xi_nodes.copy(), vals, delta)


def position_symbol(fun, h: float, N: int, delta: float = 0.0,
                    n_nodes: int = 64) -> SymbolGrid:
    """Symbol depending on position only, constant across frequencies."""
    xi_max = float(np.max(np.abs(frequency_nodes(h, N)))) * 1.01 + 1e-9
    x_nodes = np.arange(n_nodes) / n_nodes
    xi_nodes = np.linspace(-xi_max, xi_max, 5)
    fx = np.asarray([[float(fun(np.array([a, b]))) for b in x_nodes] for a in x_nodes])
    vals = np.broadcast_to(fx[:, :, None, None], (n_nodes, n_nodes, 5, 5)).copy()
    return SymbolGrid(x_nodes, x_nodes.copy(), xi_nodes, xi_nodes.copy(), vals, delta)


# -- partition normalization -------------------------------------------------------

def _interp_weights(ax: np.ndarray, q: np.ndarray, periodic: bool):
    """Linear interpolation indices/weights of query points on one axis."""
    n = len(ax)
    if n == 1:
        i0 = np.zeros(len(q), dtype=int)
        return i0, i0, np.ones(len(q)), np.zeros(len(q)), np.ones(len(q), bool)
    sp = float(ax[1] - ax[0])
    if periodic:
        rel = np.mod(q - ax[0], 1.0) / sp
        span = 1.0 / sp
        inside = np.ones(len(q), bool)
        i0 = np.floor(rel).astype(int)
        frac = rel - i0
        covered = i0 <= n - 2
        i0c = np.minimum(i0, n - 1)
        i1c = np.where(covered, i0c + 1, 0)
        # between the last node and the wrap of the first: only if axis closes
        closes = abs((n * sp) - 1.0) < 1e-9
        w1 = np.where(covered | closes, frac, 0.0)
        w0 = 1.0 - np.where(covered | closes, frac, np.where(frac < 0.5, 0.0, 1.0))
        inside = covered | closes
        return i0c % n, i1c % n, w0, w1, inside
    rel = (q - ax[0]) / sp
    inside = (rel >= -1e-9) & (rel <= n - 1 + 1e-9)
    relc = np.clip(rel, 0.0, n - 1)
    i0 = np.minimum(np.floor(relc).astype(int), n - 2)
    frac = relc - i0
    return i0, i0 + 1, 1.0 - frac, frac, inside


def symbol_value_at(sym: SymbolGrid, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of the symbol at phase points (k, 4)."""
    pts = np.atleast_2d(pts)
    n = len(pts)
    parts = []
    for axis in range(4):
        periodic = axis < 2
        parts.append(_interp_weights(sym.axes()[axis], pts[:, axis], periodic))
    out = np.zeros(n)
    inside = parts[0][4] & parts[1][4] & parts[2][4] & parts[3][4]
    for b0 in range(2):
        for b1 in range(2):
            for b2 in range(2):
                for b3 in range(2):
                    idx = (parts[0][b0], parts[1][b1], parts[2][b2], parts[3][b3])
                    w = parts[0][2 + b0] * parts[1][2 + b1] \
                        * parts[2][2 + b2] * parts[3][2 + b3]
                    out += w * sym.values[idx]
    out[~inside] = 0.0
    return out


def _weight_cap(S: np.ndarray) -> np.ndarray:
    """Target partition total: S below 0.6, exactly 1 above 0.95, smooth between."""
    sig = _smoothstep((S - 0.6) / 0.35)
    return S * (1.0 - sig) + sig


def _axes_disjoint(a: SymbolGrid, b: SymbolGrid) -> bool:
    """True when b's axis windows cannot reach any node of a (b is 0 there)."""
    for axis in range(4):
        xa, xb = a.axes()[axis], b.axes()[axis]
        la, ha = float(xa[0]), float(xa[-1])
        lb, hb = float(xb[0]), float(xb[-1])
        if axis < 2:
            # circular arcs; a full-period axis overlaps everything
            if ha - la >= 1.0 - 1e-12 or hb - lb >= 1.0 - 1e-12:
                continue
            gap = abs((0.5 * (la + ha) - 0.5 * (lb + hb) + 0.5) % 1.0 - 0.5)
            if gap - 0.5 * ((ha - la) + (hb - lb)) > 1e-9:
                return True
        else:
            if lb - ha > 1e-9 or la - hb > 1e-9:
                return True
    return False


def normalize_partition(symbols) -> list:
    """Rescale overlapping cutoffs so their pointwise sum caps at one.

    At each node of each symbol the family total S is interpolated; values are
    multiplied by weight_cap(S)/S, which leaves thin regions alone and makes
    the total exactly one wherever S >= 0.95 before normalization.
    """
    totals = []
    for sym in symbols:
        G1, G2, G3, G4 = np.meshgrid(*sym.axes(), indexing="ij")
        pts = np.stack([np.mod(G1, 1.0).ravel(), np.mod(G2, 1.0).ravel(),
                        G3.ravel(), G4.ravel()], axis=-1)
        S = np.zeros(len(pts))
        for other in symbols:
            # windows that cannot meet contribute exact zeros; skip them
            if other is not sym and _axes_disjoint(sym, other):
                continue
            S += symbol_value_at(other, pts)
        totals.append(S.reshape(sym.values.shape))
    out = []
    for sym, S in zip(symbols, totals):
        factor = np.where(S > 1e-12, _weight_cap(S) / np.maximum(S, 1e-12), 1.0)
        out.append(SymbolGrid(sym.x1, sym.x2, sym.xi1, sym.xi2,
                              sym.values * factor, sym.delta, sym.tube_ref,
                              dict(sym.meta)))
    return out


# -- quantization -----------------------------------------------------------------

def _nearest_axis_map(ax: np.ndarray, q: np.ndarray, periodic: bool):
    """Nearest symbol node per query value, with an out-of-window mask."""
    n = len(ax)
    sp = float(ax[1] - ax[0]) if n > 1 else 1.0
    if periodic:
        d = q[:, None] - ax[None, :]
        d -= np.round(d)
        d = np.abs(d)
    else:
        d = np.abs(q[:, None] - ax[None, :])
    idx = np.argmin(d, axis=1)
    dist = d[np.arange(len(q)), idx]
    return idx, dist <= 0.75 * sp


def _symbol_factors(a: SymbolGrid, u: GridField):
    nx = len(a.x1) * len(a.x2)
    nxi = len(a.xi1) * len(a.xi2)
    M = a.values.reshape(nx, nxi)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    total = float(np.sum(s * s))
    if total == 0.0:
        return []
    keep = 0
    acc = 0.0
    for k in range(len(s)):
        acc += float(s[k] ** 2)
        keep = k + 1
        if total - acc <= (RANK_TOL ** 2) * total:
            break
    if keep > RANK_CAP:
        raise RankCapError(f"symbol needs rank {keep} > {RANK_CAP}")
    x = grid_axis(u.N)
    i1, m1 = _nearest_axis_map(a.x1, np.mod(x, 1.0), True)
    i2, m2 = _nearest_axis_map(a.x2, np.mod(x, 1.0), True)
    freqs = frequency_nodes(u.h, u.N)
    j1, w1 = _nearest_axis_map(a.xi1, freqs, False)
    j2, w2 = _nearest_axis_map(a.xi2, freqs, False)
    xmask = np.outer(m1, m2)
    ximask = np.outer(w1, w2)
    comps = []
    for k in range(keep):
        Uk = U[:, k].reshape(len(a.x1), len(a.x2))
        Vk = Vt[k].reshape(len(a.xi1), len(a.xi2))
        F = Uk[np.ix_(i1, i2)] * xmask
        G = Vk[np.ix_(j1, j2)] * ximask
        comps.append((float(s[k]), F, G))
    return comps


def weyl_quantize(a: SymbolGrid, u: GridField) -> GridField:
    """Apply the symmetric split quantization of the symbol to the field."""
    comps = _symbol_factors(a, u)
    out = np.zeros_like(u.values)
    if comps:
        FU = np.fft.fft2(u.values, norm="ortho")
        for s, F, G in comps:
            t1 = F * np.fft.ifft2(G * FU, norm="ortho")
            t2 = np.fft.ifft2(G * np.fft.fft2(F * u.values, norm="ortho"),
                              norm="ortho")
            out += s * 0.5 * (t1 + t2)
    return GridField(out, u.h)


# -- propagation average ------------------------------------------------------------

def _window_certificate_ok(cert, t0: float, T: float) -> bool:
    return (cert is not None and getattr(cert, "certified", False)
            and getattr(cert, "t0", math.inf) <= t0 + 1e-12
            and getattr(cert, "T1", -math.inf) >= T - 1e-12)


def time_average_symbol(chi: SymbolGrid, t0: float, T: float, steps: int = 400,
                        certificate=None) -> float:
    """Sup over phase space of the window average of chi^2 along the flow.

    Transport on the flat torus is exact precomposition with x + t xi, so per
    frequency node the average is a boxcar convolution along the line field;
    cumulative sums give the exact discrete maximum.  Requires a certificate
    that [t0, T] is non-self-looping for the tube behind chi, and asserts the
    propagation bound sup <= t0/T (1 + 1e-2).
    """
    if not (0.0 < t0 <= T):
        raise DomainError("need 0 < t0 <= T")
    if not _window_certificate_ok(certificate, t0, T):
        raise CertificateMissingError(
            "propagation averaging requires a certified non-self-looping window")
    ds_target = min(T / max(4, steps), chi.spacing(0) / 2.0)
    sup_avg = 0.0
    for i3, v3 in enumerate(chi.xi1):
        for i4, v4 in enumerate(chi.xi2):
            slab = chi.values[:, :, i3, i4]
            if float(np.max(np.abs(slab))) < 1e-14:
                continue
            xi = np.array([v3, v4])
            speed = float(np.linalg.norm(xi))
            if speed < 1e-12:
                # frozen point: average equals chi^2 itself
                sup_avg = max(sup_avg, float(np.max(slab ** 2)))
                continue
            e_par = xi / speed
            e_perp = np.array([-e_par[1], e_par[0]])
            cx = np.array([0.5 * (chi.x1[0] + chi.x1[-1]),
                           0.5 * (chi.x2[0] + chi.x2[-1])])
            half1 = 0.5 * (chi.x1[-1] - chi.x1[0])
            half2 = 0.5 * (chi.x2[-1] - chi.x2[0])
            half_perp = abs(half1 * e_perp[0]) + abs(half2 * e_perp[1])
            half_par = abs(half1 * e_par[0]) + abs(half2 * e_par[1])
            n_off = max(3, int(math.ceil(2.0 * half_perp / ds_target)) + 1)
            offs = np.linspace(-half_perp, half_perp, n_off)
            s_lo = -T * speed - half_par
            s_hi = half_par
            n_s = max(8, int(math.ceil((s_hi - s_lo) / ds_target)) + 1)
            svals = np.linspace(s_lo, s_hi, n_s)
            ds = svals[1] - svals[0]
            base = cx[None, :] + offs[:, None] * e_perp[None, :]
            pts = base[:, None, :] + svals[None, :, None] * e_par[None, None, :]
            flat = pts.reshape(-1, 2)
            q = np.concatenate([np.mod(flat, 1.0),
                                np.tile(xi, (len(flat), 1))], axis=1)
            vals = symbol_value_at(chi, q).reshape(n_off, n_s) ** 2
            cum = np.concatenate([np.zeros((n_off, 1)),
                                  np.cumsum(vals, axis=1) * ds], axis=1)
            k = int(round(T * speed / ds))
            if k >= cum.shape[1]:
                k = cum.shape[1] - 1
            if k < 1:
                continue
            avg = (cum[:, k:] - cum[:, :-k]) / (T * speed)
            sup_avg = max(sup_avg, float(np.max(avg)))
    bound = (t0 / T) * (1.0 + 1e-2)
    if sup_avg > bound:
        raise AssertionFailure(
            f"propagated average {sup_avg:.6g} exceeds the window bound {bound:.6g}")
    return sup_avg


# -- localized masses ---------------------------------------------------------------

@dataclass
class MassReport:
    per_tube: list           # (tube_index, mass)
    total: float
    u_norm_sq: float
    ratio: float
    window: tuple | None
    group: str = ""


def localized_mass(u: GridField, symbols, certificate=None,
                   group: str = "") -> MassReport:
    """Squared norms of the cutoff-localized field, per tube and total.

    With a certified window the ratio column compares the group total to
    (t0/T) ||u||^2; without one the ratio is reported as nan.
    """
    per = []
    total = 0.0
    for sym in symbols:
        v = weyl_quantize(sym, u)
        m = field_norm(v) ** 2
        per.append((sym.tube_ref if sym.tube_ref is not None else -1, m))
        total += m
    un = field_norm(u) ** 2
    if certificate is not None and getattr(certificate, "certified", False):
        t0 = float(certificate.t0)
        T1 = float(certificate.T1)
        ratio = total / ((t0 / T1) * un) if un > 0 else math.inf
        window = (t0, T1)
    else:
        ratio = math.nan
        window = None
    return MassReport(per, total, un, ratio, window, group)


MASS_COLUMNS = ["tube_index", "group", "mass", "ratio"]


def write_mass_csv(reports, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(MASS_COLUMNS) + "\n")
        for rep in reports:
            for idx, mass in rep.per_tube:
                fh.write("%d,%s,%.17g,%.17g\n" % (idx, rep.group, mass, rep.ratio))


# -- binary grid dump ---------------------------------------------------------------

def dump_grid(u: GridField, path) -> None:
    """Flat binary dump: 32-byte header (magic, N, h) then row-major complex."""
    header = HEADER_MAGIC + struct.pack("<Qd", u.N, u.h) + b"\x00" * 8
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(u.values, dtype=np.complex128).tobytes())


def load_grid(path) -> GridField:
    with open(path, "rb") as fh:
        header = fh.read(32)
        if len(header) != 32 or header[:8] != HEADER_MAGIC:
            raise InputError("not a grid dump file")
        N, h = struct.unpack("<Qd", header[8:24])
        data = np.frombuffer(fh.read(), dtype=np.complex128)
    if len(data) != N * N:
        raise InputError("grid dump payload truncated")
    return GridField(data.reshape(int(N), int(N)).copy(), h)
