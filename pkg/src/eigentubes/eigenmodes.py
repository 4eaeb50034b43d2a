"""Closed-form model modes and their averages, sup norms, and scaling fits.

Exact Laplace eigenfunctions on the sphere and flat torus (zonal and
highest-weight harmonics, lattice exponentials, seeded random fixed-degree
combinations) plus the planar Gaussian beam model.  No discretized
eigensolver lives here; every mode is analytic, so norms and eigenvalue
residuals have closed forms the numerics can be held to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import geometry
from .errors import (DomainError, InputError, OverflowGuardError,
                     QuadratureError, RankError, ResolutionError)
from .submanifold import Submanifold

MAX_DEGREE = 10 ** 5


@dataclass(frozen=True)
class EigenmodeSpec:
    kind: str
    h: float
    l: int | None = None
    m: tuple | None = None
    axis: tuple | None = None
    seed: int | None = None
    profile: object = None
    is_eigenfunction: bool = True


def zonal(l: int, axis=(0.0, 0.0, 1.0)) -> EigenmodeSpec:
    _check_degree(l)
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if n == 0:
        raise InputError("axis must be nonzero")
    h = 1.0 / math.sqrt(l * (l + 1.0))
    return EigenmodeSpec("Zonal", h, l=int(l), axis=tuple(a / n))


def highest_weight(l: int) -> EigenmodeSpec:
    _check_degree(l)
    h = 1.0 / math.sqrt(l * (l + 1.0))
    return EigenmodeSpec("HighestWeight", h, l=int(l))


def torus_mode(m) -> EigenmodeSpec:
    mv = np.asarray(m)
    if mv.shape != (2,) or not np.all(mv == np.round(mv)):
        raise InputError("lattice vector must be an integer 2-vector")
    if np.all(mv == 0):
        raise InputError("lattice vector must be nonzero")
    h = 1.0 / (2.0 * math.pi * float(np.linalg.norm(mv)))
    return EigenmodeSpec("TorusMode", h, m=(int(mv[0]), int(mv[1])))


def random_sphere_mode(l: int, seed: int = 0) -> EigenmodeSpec:
    _check_degree(l)
    h = 1.0 / math.sqrt(l * (l + 1.0))
    return EigenmodeSpec("RandomSphereMode", h, l=int(l), seed=int(seed))


def euclidean_beam(h: float, profile=None) -> EigenmodeSpec:
    if not (0.0 < h <= 0.1):
        raise DomainError("beam scale must lie in (0, 0.1]")
    return EigenmodeSpec("EuclideanBeam", float(h), profile=profile,
                         is_eigenfunction=False)


def _check_degree(l) -> None:
    if int(l) != l or l < 1:
        raise InputError("degree must be a positive integer")
    if l > MAX_DEGREE:
        raise OverflowGuardError(f"degree {l} beyond the stable range {MAX_DEGREE}")


def eigen_residual(spec: EigenmodeSpec) -> float:
    """Analytic residual factor |h^2 * eigenvalue - 1| (nan for non-modes)."""
    if not spec.is_eigenfunction:
        return math.nan
    if spec.kind == "TorusMode":
        lam = 4.0 * math.pi ** 2 * float(np.dot(spec.m, spec.m))
    else:
        lam = spec.l * (spec.l + 1.0)
    return abs(spec.h ** 2 * lam - 1.0)


# -- evaluation ------------------------------------------------------------------

def _legendre_upward(l: int, x: np.ndarray) -> np.ndarray:
    """P_l(x) by the three-term recurrence, stable on [-1, 1]."""
    if l > MAX_DEGREE:
        raise OverflowGuardError(f"degree {l} beyond the stable range {MAX_DEGREE}")
    p_prev = np.ones_like(x)
    if l == 0:
        return p_prev
    p = x.copy()
    for k in range(1, l):
        p, p_prev = ((2 * k + 1) * x * p - k * p_prev) / (k + 1), p
    return p


def _embed_batch(x: np.ndarray, chart: int) -> np.ndarray:
    th, ph = x[..., 0], x[..., 1]
    st, ct = np.sin(th), np.cos(th)
    sp, cp = np.sin(ph), np.cos(ph)
    if chart == 0:
        return np.stack([st * cp, st * sp, ct], axis=-1)
    return np.stack([ct, st * cp, st * sp], axis=-1)


def _hw_log_amp(l: int) -> float:
    # L2(S^2) normalization of the degree-l highest-weight harmonic
    return 0.5 * (math.log(2 * l + 1.0) - math.log(4.0 * math.pi)
                  + math.lgamma(2 * l + 1.0) - 2 * l * math.log(2.0)
                  - 2.0 * math.lgamma(l + 1.0))


def _norm_assoc_legendre(l: int, ct: np.ndarray, st: np.ndarray) -> np.ndarray:
    """Orthonormal associated Legendre rows for m = 0..l at the given angles."""
    out = np.empty((l + 1,) + ct.shape)
    pmm = np.full_like(ct, math.sqrt(1.0 / (4.0 * math.pi)))
    for m in range(l + 1):
        if m > 0:
            pmm = -math.sqrt((2 * m + 1.0) / (2.0 * m)) * st * pmm
        if m == l:
            out[m] = pmm
            continue
        p_prev = pmm
        p = math.sqrt(2 * m + 3.0) * ct * pmm
        for k in range(m + 2, l + 1):
            a = math.sqrt((4.0 * k * k - 1.0) / (k * k - m * m))
            b = math.sqrt(((k - 1.0) ** 2 - m * m) / (4.0 * (k - 1.0) ** 2 - 1.0))
            p, p_prev = a * (ct * p - b * p_prev), p
        out[m] = p
    return out


def _random_coeffs(l: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    c = rng.normal(size=2 * l + 1) + 1j * rng.normal(size=2 * l + 1)
    return c / np.linalg.norm(c)


def eval_mode(spec: EigenmodeSpec, x, chart: int = 0):
    """Evaluate the mode at chart coordinates (vectorized over leading axes)."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    pts = x[None, :] if scalar else x
    if spec.kind == "TorusMode":
        out = np.exp(2j * math.pi * (pts @ np.asarray(spec.m, dtype=float)))
    elif spec.kind == "Zonal":
        X = _embed_batch(pts, chart)
        c = np.clip(X @ np.asarray(spec.axis), -1.0, 1.0)
        out = math.sqrt((2 * spec.l + 1) / (4.0 * math.pi)) \
            * _legendre_upward(spec.l, c).astype(complex)
    elif spec.kind == "HighestWeight":
        X = _embed_batch(pts, chart)
        w = X[..., 0] + 1j * X[..., 1]
        r = np.abs(w)
        logamp = np.where(r > 0, spec.l * np.log(np.maximum(r, 1e-300)), -np.inf)
        phase = np.where(r > 0, np.exp(1j * spec.l * np.angle(w)), 0.0)
        out = np.exp(_hw_log_amp(spec.l) + logamp) * phase
    elif spec.kind == "RandomSphereMode":
        X = _embed_batch(pts, chart)
        ct = np.clip(X[..., 2], -1.0, 1.0)
        st = np.sqrt(np.maximum(0.0, 1.0 - ct * ct))
        ph = np.arctan2(X[..., 1], X[..., 0])
        rows = _norm_assoc_legendre(spec.l, ct, st)
        coeffs = _random_coeffs(spec.l, spec.seed)
        out = np.zeros(pts.shape[:-1], dtype=complex)
        for m in range(-spec.l, spec.l + 1):
            base = rows[abs(m)] * np.exp(1j * m * ph)
            if m < 0:
                base = (-1.0) ** m * np.conj(rows[abs(m)] * np.exp(1j * abs(m) * ph))
            out += coeffs[m + spec.l] * base
    elif spec.kind == "EuclideanBeam":
        h = spec.h
        r2 = np.sum(pts * pts, axis=-1)
        out = h ** (-0.25) * np.exp(1j * pts[..., 0] / h - r2 / (2.0 * h))
        if spec.profile is not None:
            out = out * np.asarray([spec.profile(p) for p in pts])
    else:
        raise InputError(f"unknown mode kind {spec.kind}")
    return complex(out[0]) if scalar else out


def mode_l2_norm(spec: EigenmodeSpec) -> float:
    """Closed-form L2 norm on the mode's home space."""
    if spec.kind == "EuclideanBeam":
        if spec.profile is not None:
            raise InputError("profiled beams have no closed-form norm")
        return math.sqrt(math.pi) * spec.h ** 0.25
    return 1.0


# -- averages and restrictions -----------------------------------------------------

def _quadrature_value(H: Submanifold, spec: EigenmodeSpec) -> complex:
    if H.kind == "Point":
        return eval_mode(spec, H.xs[0], int(H.charts[0]))
    total = 0.0 + 0.0j
    charts = np.asarray(H.charts, dtype=int)
    for ch in np.unique(charts):
        sel = charts == ch
        vals = eval_mode(spec, H.xs[sel], int(ch))
        total += complex(np.sum(np.asarray(H.weights)[sel] * vals))
    return total


def average_over(H: Submanifold, spec: EigenmodeSpec, quad_refine: int = 1):
    """Quadrature of the mode over H with a refinement consistency check.

    Returns (value, error_estimate); the estimate is the difference between
    the two finest levels.
    """
    if quad_refine < 1 or int(quad_refine) != quad_refine:
        raise InputError("quad_refine must be a positive integer")
    if H.kind == "Point":
        return _quadrature_value(H, spec), 0.0
    d0 = max(4, int(H.density * quad_refine))
    coarse = _quadrature_value(H.with_density(d0), spec)
    fine = _quadrature_value(H.with_density(2 * d0), spec)
    err = abs(fine - coarse)
    if err > 1e-3 * max(abs(fine), 1e-9):
        raise QuadratureError(
            f"quadrature levels disagree: {coarse:.6g} vs {fine:.6g}")
    return fine, err


def beam_restriction(h: float, angle: float, half_width: float | None = None) -> complex:
    """Integral of the planar beam along a line through the origin.

    The line makes the given angle with the propagation axis; pi/2 is the
    normal crossing.  Adaptive quadrature over |s| <= half_width (default
    20 sqrt(h), far past the Gaussian mass).
    """
    if not (0.0 < h <= 0.1):
        raise DomainError("beam scale must lie in (0, 0.1]")
    if not (0.0 <= angle <= math.pi / 2.0 + 1e-12):
        raise DomainError("crossing angle must lie in [0, pi/2]")
    W = 20.0 * math.sqrt(h) if half_width is None else float(half_width)
    c = math.cos(angle)
    amp = h ** (-0.25)

    def f_re(s):
        return amp * math.exp(-s * s / (2.0 * h)) * math.cos(c * s / h)

    def f_im(s):
        return amp * math.exp(-s * s / (2.0 * h)) * math.sin(c * s / h)

    lim = max(200, int(20.0 * W * c / h) + 50)
    re, _ = integrate.quad(f_re, -W, W, limit=lim, epsabs=1e-14, epsrel=1e-10)
    im, _ = integrate.quad(f_im, -W, W, limit=lim, epsabs=1e-14, epsrel=1e-10)
    return complex(re, im)


def beam_restriction_exact(h: float, angle: float) -> complex:
    """Closed form of the untruncated crossing integral (reference scale)."""
    return math.sqrt(2.0 * math.pi) * h ** 0.25 * math.exp(
        -math.cos(angle) ** 2 / (2.0 * h))


# -- sup norms ----------------------------------------------------------------------

def _refine_1d(fun, t0: float, lo: float, hi: float, width: float, floor: float) -> float:
    """Shrinking three-point search for a local max of fun near t0."""
    best_t, best = t0, fun(t0)
    w = width
    while w > floor:
        for t in (best_t - w, best_t + w):
            t = min(max(t, lo), hi)
            v = fun(t)
            if v > best:
                best, best_t = v, t
        w *= 0.5
    return best


def sup_ratio(spec: EigenmodeSpec, grid_density: int | None = None) -> float:
    """Sup of |u| over its home space divided by the closed-form L2 norm.

    Grid stage resolves the oscillation (at least 8 nodes per wavelength),
    then a local shrinking search sharpens the maximizer below h/8.
    """
    h = spec.h
    if spec.kind == "TorusMode":
        return 1.0
    if spec.kind == "EuclideanBeam":
        return h ** (-0.25) / mode_l2_norm(spec)
    if spec.kind in ("Zonal", "HighestWeight"):
        # |u| depends only on the colatitude in the mode's own frame
        if spec.kind == "Zonal":
            ref = zonal(spec.l)  # north-axis copy; sup is rotation invariant

            def prof(th):
                return abs(eval_mode(ref, np.array([th, 0.0]), 0))
        else:
            def prof(th):
                return abs(eval_mode(spec, np.array([th, 0.0]), 0))
        n = max(grid_density or 0, 8 * (2 * spec.l + 1), 64)
        ths = np.linspace(0.0, math.pi, n)
        if spec.kind == "Zonal":
            vals = np.abs(eval_mode(zonal(spec.l), np.stack(
                [ths, np.zeros_like(ths)], axis=-1), 0))
        else:
            vals = np.abs(eval_mode(spec, np.stack(
                [ths, np.zeros_like(ths)], axis=-1), 0))
        k = int(np.argmax(vals))
        coarse = float(vals[k])
        spacing = math.pi / (n - 1)
        refined = _refine_1d(prof, float(ths[k]), 0.0, math.pi, spacing, h / 8.0)
        if refined > coarse * 1.01:
            raise ResolutionError("grid missed the maximizer by more than 1%")
        return refined / mode_l2_norm(spec)
    if spec.kind == "RandomSphereMode":
        n = max(grid_density or 0, int(50 * spec.l * spec.l), 4096)
        k = np.arange(n)
        golden = (1.0 + math.sqrt(5.0)) / 2.0
        ct = 1.0 - 2.0 * (k + 0.5) / n
        th = np.arccos(np.clip(ct, -1.0, 1.0))
        ph = np.mod(2.0 * math.pi * k / golden, 2.0 * math.pi)
        pts = np.stack([th, ph], axis=-1)
        vals = np.abs(eval_mode(spec, pts, 0))
        i = int(np.argmax(vals))
        coarse = float(vals[i])
        cell = math.sqrt(4.0 * math.pi / n)

        best = coarse
        t0, p0 = float(th[i]), float(ph[i])
        w = cell
        while w > h / 8.0:
            for dt in (-w, 0.0, w):
                for dp in (-w, 0.0, w):
                    v = abs(eval_mode(spec, np.array([t0 + dt, p0 + dp]), 0))
                    if v > best:
                        best, t0, p0 = v, t0 + dt, p0 + dp
            w *= 0.5
        if best > coarse * 1.01:
            raise ResolutionError("grid missed the maximizer by more than 1%")
        return best / mode_l2_norm(spec)
    raise InputError(f"unknown mode kind {spec.kind}")


# -- scaling fits -------------------------------------------------------------------

@dataclass
class ScalingFit:
    pairs: list
    exponent: float
    log_correction: float
    residual: float
    model: str


def scaling_fit(pairs, model: str = "PowerLaw") -> ScalingFit:
    """Least-squares exponent fit in log-log coordinates.

    PowerLaw fits value = c h^p; PowerTimesSqrtLog adds a (log 1/h)^q factor
    and reports q as the log correction.
    """
    pairs = [(float(a), float(b)) for a, b in pairs]
    if len(pairs) < 4:
        raise InputError("need at least 4 (h, value) pairs")
    hs = np.array([p[0] for p in pairs])
    vs = np.array([abs(p[1]) for p in pairs])
    if np.any(hs <= 0) or np.any(vs <= 0):
        raise DomainError("h and |value| must be positive for a log-log fit")
    span = math.log10(float(np.max(hs)) / float(np.min(hs)))
    if span < 1.0:
        raise DomainError(f"abscissae span only {span:.2f} decades; need at least 1")
    L = np.log(hs)
    y = np.log(vs)
    if model == "PowerLaw":
        A = np.column_stack([np.ones_like(L), L])
    elif model == "PowerTimesSqrtLog":
        A = np.column_stack([np.ones_like(L), L, np.log(np.log(1.0 / hs))])
    else:
        raise InputError(f"unknown fit model {model}")
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise RankError("degenerate abscissae for the requested model")
    coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    p = float(coef[1])
    q = float(coef[2]) if model == "PowerTimesSqrtLog" else 0.0
    return ScalingFit(pairs, p, q, resid, model)


MODES_COLUMNS = ["kind", "l_or_m", "h", "value_re", "value_im", "abs", "err_estimate"]


def write_modes_csv(rows, path) -> None:
    """Rows: (kind, l_or_m label, h, complex value, err)."""
    with open(path, "w") as fh:
        fh.write(",".join(MODES_COLUMNS) + "\n")
        for kind, label, h, value, err in rows:
            v = complex(value)
            fh.write(",".join([
                str(kind), str(label), "%.17g" % h,
                "%.17g" % v.real, "%.17g" % v.imag,
                "%.17g" % abs(v), "%.17g" % err]) + "\n")
