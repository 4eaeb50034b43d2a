"""Experiment pipelines: one runner per named experiment.

Each runner writes CSV/JSON artifacts into a staging directory and records
named numeric assertions.  The orchestrator wraps that in an atomic directory
swap and a manifest with per-file checksums, so identical configurations can
be re-run and compared byte for byte.  Assertion failures do not destroy the
outputs: the directory is finalized first and the failure raised afterwards.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata as _im
from pathlib import Path

import numpy as np

from . import bounds, eigenmodes, geometry, kernels, quantize, returns, submanifold, tubes
from . import flow as flow_mod
from .config import ExperimentConfig
from .errors import AssertionFailure, ConfigError, InputError, SchemaMismatch
from .geometry import CotangentPoint

MANIFEST_NAME = "manifest.json"
MANIFEST_SCHEMA = 1


def code_version() -> str:
    try:
        return _im.version("eigentubes")
    except _im.PackageNotFoundError:
        return "unpackaged"


def worker_count() -> int:
    raw = os.environ.get("EIGENTUBES_WORKERS", "")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)


def _pmap(fn, items):
    """Order-preserving map, threaded when the worker count allows."""
    items = list(items)
    w = worker_count()
    if w <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(w, len(items))) as ex:
        return list(ex.map(fn, items))


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return "%d" % v
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _write_rows(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(c) for c in row) + "\n")


@dataclass
class RunContext:
    """Mutable state shared by a runner: staging dir, seed, params, findings."""

    tmp: Path
    seed: int
    params: dict
    warnings: list = field(default_factory=list)
    asserts: list = field(default_factory=list)
    key_numbers: dict = field(default_factory=dict)

    def path(self, name: str) -> Path:
        return self.tmp / name

    def check(self, name: str, passed, detail: str = "") -> bool:
        ok = bool(passed)
        self.asserts.append({"name": name, "passed": ok, "detail": detail})
        return ok

    def warn(self, msg: str) -> None:
        self.warnings.append(msg)

    def failed_names(self):
        return [a["name"] for a in self.asserts if not a["passed"]]


_TORUS = geometry.flat_torus()
_SPHERE = geometry.sphere()


# -- zonal / highest-weight sup growth ------------------------------------------------

def run_zonal_sup(ctx: RunContext) -> None:
    p = ctx.params
    mode = p["mode"]
    if mode not in ("zonal", "highest_weight"):
        raise ConfigError(f"mode must be zonal or highest_weight, got {mode!r}")
    l_list = [int(l) for l in p["l_list"]]
    gd = int(p["grid_density"]) or None

    def one(l):
        spec = eigenmodes.zonal(l) if mode == "zonal" else eigenmodes.highest_weight(l)
        return spec.h, eigenmodes.sup_ratio(spec, gd)

    pairs = _pmap(one, l_list)
    rows = [(mode, l, h, complex(r), 0.0) for l, (h, r) in zip(l_list, pairs)]
    fit = eigenmodes.scaling_fit(pairs, "PowerLaw")
    target = -0.5 if mode == "zonal" else -0.25
    ctx.check("sup_ratio_exponent",
              abs(fit.exponent - target) <= 0.05,
              f"fitted {fit.exponent:.4f}, target {target} +- 0.05")
    ctx.key_numbers["sup_exponent"] = fit.exponent
    ctx.key_numbers["sup_fit_residual"] = fit.residual

    if p["include_equator"] and mode == "zonal":
        H = submanifold.latitude_circle(_SPHERE, math.pi / 2.0, density=24)
        worst = math.inf
        for l in l_list:
            if l % 2:
                continue        # odd degrees integrate to zero on the equator
            spec = eigenmodes.zonal(l)
            val, err = eigenmodes.average_over(H, spec)
            lower = 0.5 * (2.0 * math.pi) * math.sqrt((2 * l + 1) / (4.0 * math.pi)) \
                * math.sqrt(2.0 / (math.pi * l))
            margin = abs(val) / lower
            worst = min(worst, margin)
            ctx.check(f"equator_integral_l{l}", abs(val) >= lower,
                      f"|integral| {abs(val):.6g} vs floor {lower:.6g}")
            rows.append(("equator_integral", l, spec.h, val, err))
        if math.isfinite(worst):
            ctx.key_numbers["equator_worst_margin"] = worst

    eigenmodes.write_modes_csv(rows, ctx.path("modes.csv"))


# -- beam crossing integrals ----------------------------------------------------------

def run_beam_restriction(ctx: RunContext) -> None:
    p = ctx.params
    h_list = [float(h) for h in p["h_list"]]
    angles = [float(a) for a in p["angles_deg"]]
    rows = []
    normal_pairs = []
    for h in h_list:
        for deg in angles:
            ang = math.radians(deg)
            v = eigenmodes.beam_restriction(h, ang)
            ref = eigenmodes.beam_restriction_exact(h, ang)
            rows.append(("beam", "%gdeg" % deg, h, v, abs(v - ref)))
            if abs(deg - 90.0) < 1e-9:
                expected = math.sqrt(2.0 * math.pi) * h ** 0.25
                rel = abs(v - expected) / expected
                ctx.check("normal_crossing_h%g" % h, rel <= 1e-6,
                          f"relative error {rel:.3e}")
                normal_pairs.append((h, abs(v)))
            elif abs(deg - 45.0) < 1e-9 and abs(h - 1e-3) < 1e-12:
                ctx.check("oblique_crossing_suppressed", abs(v) < h ** 5,
                          f"|value| {abs(v):.3e} vs h^5 {h ** 5:.1e}")
                ctx.key_numbers["oblique_h1e-3_abs"] = abs(v)
    if len(normal_pairs) >= 4:
        fit = eigenmodes.scaling_fit(normal_pairs, "PowerLaw")
        ctx.check("normal_exponent", abs(fit.exponent - 0.25) <= 0.01,
                  f"fitted {fit.exponent:.5f}, target 0.25")
        ctx.key_numbers["normal_exponent"] = fit.exponent
    else:
        ctx.warn("fewer than 4 normal-incidence points; exponent fit skipped")
    eigenmodes.write_modes_csv(rows, ctx.path("modes.csv"))


# -- lattice-mode averages over a closed geodesic --------------------------------------

def run_torus_average(ctx: RunContext) -> None:
    p = ctx.params
    density = int(p["density"])
    H = submanifold.closed_geodesic(
        _TORUS, CotangentPoint(np.zeros(2), np.array([1.0, 0.0]), 0), 1.0,
        density=density)
    rows = []
    worst = 0.0
    for mv in p["m_list"]:
        if len(mv) != 2:
            raise ConfigError("each lattice vector needs two components")
        m1, m2 = int(mv[0]), int(mv[1])
        spec = eigenmodes.torus_mode((m1, m2))
        val, err = eigenmodes.average_over(H, spec)
        expected = 1.0 if m1 == 0 else 0.0
        gap = abs(val - expected)
        worst = max(worst, gap)
        ctx.check(f"lattice_average_{m1}_{m2}", gap <= 1e-10,
                  f"|value - {expected:g}| = {gap:.3e}")
        rows.append(("torus", "%d|%d" % (m1, m2), spec.h, val, err))
    ctx.key_numbers["worst_average_gap"] = worst
    eigenmodes.write_modes_csv(rows, ctx.path("modes.csv"))


# -- return times and return-map invariance ---------------------------------------------

def _golden_bin(val: float, period: float, bins: int) -> int:
    # irrational offset keeps lattice-aligned samples off the bin boundaries
    off = 0.5 * (math.sqrt(5.0) - 1.0) * period / bins
    return int(((val - off) % period) / period * bins) % bins


def _bin_defect(records, weights, key_fn, period: float, bins: int) -> float:
    before: dict = {}
    after: dict = {}
    for rec, w in zip(records, weights):
        kb = _golden_bin(key_fn(rec.rho), period, bins)
        ka = _golden_bin(key_fn(rec.eta), period, bins)
        before[kb] = before.get(kb, 0.0) + w
        after[ka] = after.get(ka, 0.0) + w
    total = sum(before.values())
    keys = set(before) | set(after)
    return max(abs(before.get(k, 0.0) - after.get(k, 0.0)) for k in keys) / total


def run_sphere_returns(ctx: RunContext) -> None:
    p = ctx.params
    density = int(p["density"])
    bins = int(p["bins"])

    x0 = np.array([1.1, 0.8])
    e_th, e_ph = geometry.sphere_coordinate_frame(x0, 0)
    e_ph = e_ph / np.linalg.norm(e_ph)

    def fiber_angle(rho: CotangentPoint) -> float:
        _, V = geometry.sphere_cotangent_embed(rho)
        return math.atan2(float(V @ e_ph), float(V @ e_th)) % (2.0 * math.pi)

    def longitude(rho: CotangentPoint) -> float:
        X = geometry.sphere_embed(rho.x, rho.chart)
        return math.atan2(X[1], X[0]) % (2.0 * math.pi)

    def height(rho: CotangentPoint) -> float:
        return float(rho.x[1]) % 1.0

    # a closed-curve return can land midway between cloud nodes, so the
    # proximity gate there must exceed half the node spacing
    equator = submanifold.latitude_circle(_SPHERE, math.pi / 2.0, density=density)
    eq_prox = 1.5 * math.pi / len(equator.xs)
    cases = [
        ("sphere_point",
         submanifold.point(_SPHERE, x0, 0, density=density),
         2.0 * math.pi, 8.0, fiber_angle, 2.0 * math.pi, None),
        ("sphere_equator", equator,
         math.pi, 4.5, longitude, 2.0 * math.pi, eq_prox),
        ("torus_vertical",
         submanifold.closed_geodesic(
             _TORUS, CotangentPoint(np.array([0.37, 0.0]), np.array([0.0, 1.0]), 0),
             1.0, density=density),
         1.0, 1.6, height, 1.0, None),
    ]

    for name, H, expected, t_max, key_fn, period, prox in cases:
        samples = H.conormal()
        recs = returns.all_returns(H, t_max, prox_tol=prox)
        finite = [r for r in recs if math.isfinite(r.T_H)]
        ctx.check(f"{name}_all_return", len(finite) == len(recs),
                  f"{len(finite)}/{len(recs)} samples returned before t={t_max:g}")
        if finite:
            worst = max(abs(r.T_H - expected) for r in finite)
            ctx.check(f"{name}_return_time", worst <= 1e-6,
                      f"max |T_H - {expected:.6f}| = {worst:.3e}")
            ctx.key_numbers[f"{name}_T_H_max_err"] = worst
            ws = [samples[r.sample_index].weight for r in finite]
            defect = _bin_defect(finite, ws, key_fn, period, bins)
            # discrete bins can misplace boundary nodes, never more
            quad_err = 4.0 * max(ws) / sum(ws)
            ctx.check(f"{name}_return_map_invariance", defect <= quad_err,
                      f"max bin-mass defect {defect:.3e} <= {quad_err:.3e}")
        returns.write_returns_csv(recs, ctx.path(f"returns_{name}.csv"))


# -- staged-limit ladder over a conormal ball cover -------------------------------------

LADDER_COLUMNS = ["stage", "row", "S", "N", "T", "sigma_B", "n_groups",
                  "sigma_groups_total", "bracket"]


def run_cover_partition(ctx: RunContext) -> None:
    p = ctx.params
    base = np.array([float(v) for v in p["base_point"]])
    n_balls = int(p["n_balls"])
    T_list = sorted(float(t) for t in p["T_list"])
    S_list = sorted(float(s) for s in p["S_list"])
    N_list = sorted(int(nv) for nv in p["N_list"])
    T_hor = float(p["T_hor"])
    if N_list[-1] > n_balls + 1:
        raise ConfigError("N values cannot exceed the ball count plus one")

    density = math.ceil(n_balls * int(p["samples_per_ball"]) / (2.0 * math.pi))
    H = submanifold.point(_TORUS, base, 0, density=density)
    radius = 2.0 * math.sin(math.pi / (2.0 * n_balls)) * (1.0 + 1e-3)
    ball_cover = []
    for i in range(n_balls):
        ang = (i + 0.5) * 2.0 * math.pi / n_balls
        xi = geometry.covector_from_angle(_TORUS, base, ang, 0)
        ball_cover.append((CotangentPoint(base.copy(), xi, 0), radius))

    T_base = T_list[0]
    scan = returns.recurrence_scan(H, ball_cover, T_hor, T_base)

    def decompose(T, N):
        dec = returns.recurrence_decomposition(H, ball_cover, T, N=N,
                                               T_hor=T_hor, scan=scan)
        if dec.inconclusive:
            raise InputError(f"decomposition at T={T} was inconclusive")
        return dec

    rows = []
    brackets = []

    dec_base = decompose(T_base, N_list[0])
    for S in S_list:
        rep = bounds.prelim_bracket(
            dec_base.sigma_B, [(sg, T_base, S) for sg in dec_base.sigma_groups])
        rows.append(("S", len(rows) + 1, S, N_list[0], T_base, dec_base.sigma_B,
                     len(dec_base.sigma_groups), sum(dec_base.sigma_groups),
                     rep.bracket))
        brackets.append(rep.bracket)

    for N in N_list:
        dec = decompose(T_base, N)
        rows.append(("N", len(rows) + 1, None, N, T_base, dec.sigma_B,
                     0, None, math.sqrt(dec.sigma_B)))
        brackets.append(math.sqrt(dec.sigma_B))

    for T in T_list[1:]:
        dec = decompose(T, N_list[-1])
        rows.append(("T", len(rows) + 1, None, N_list[-1], T, dec.sigma_B,
                     0, None, math.sqrt(dec.sigma_B)))
        brackets.append(math.sqrt(dec.sigma_B))

    nS, nN = len(S_list), len(N_list)
    scale = max(1.0, brackets[0])
    ok_chain = all(brackets[i + 1] <= brackets[i] + 1e-12 * scale
                   for i in range(len(brackets) - 1))
    ctx.check("ladder_no_inversions", ok_chain,
              "staged brackets: " + ", ".join("%.6f" % b for b in brackets))
    for i in range(nS - 1):
        ctx.check(f"ladder_strict_S{i}", brackets[i] - brackets[i + 1] > 1e-9,
                  f"{brackets[i]:.6f} -> {brackets[i + 1]:.6f}")
    ctx.check("ladder_strict_junction", brackets[nS - 1] - brackets[nS] > 1e-9,
              f"{brackets[nS - 1]:.6f} -> {brackets[nS]:.6f}")
    ctx.check("ladder_strict_T_net",
              brackets[nS + nN - 1] - brackets[-1] > 1e-9,
              f"{brackets[nS + nN - 1]:.6f} -> {brackets[-1]:.6f}")
    ctx.key_numbers["ladder_brackets"] = brackets
    ctx.key_numbers["n_samples"] = len(H.conormal())

    _write_rows(ctx.path("ladder.csv"), LADDER_COLUMNS, rows)


# -- toy-map contraction partition and its h-sweep --------------------------------------

def run_catmap_contraction(ctx: RunContext) -> None:
    p = ctx.params
    matrix = tuple(tuple(int(v) for v in row) for row in p["matrix"])
    toy = tubes.HyperbolicToyMap(matrix)
    Lam = toy.expansion_rate()
    alpha = float(p["alpha"])
    res_exp = int(p["resolution"])
    t0, T, eps = int(p["t0"]), int(p["T"]), float(p["eps"])

    A0 = tubes.stable_rectangle(toy, p["center"], float(p["half_stable"]),
                                float(p["half_unstable"]), res_exp)
    res = tubes.contraction_partition(toy, A0, t0, T, eps, seed=ctx.seed)
    frac = res.residual / res.sigma0
    ctx.check("residual_fraction", frac <= eps + 1e-15,
              f"residual/sigma0 = {frac:.4f} (eps = {eps})")
    ctx.key_numbers["residual_fraction"] = frac
    ctx.key_numbers["n_levels"] = len(res.groups)

    # declared scale small enough that the largest window [t0, T] sits inside
    # the certification budget 2 alpha T_e(h) with a half-step margin
    h_cert = math.exp(-(T + 0.5) * Lam / alpha)
    cert = tubes.PartitionCertificate(
        "catmap", h_cert, alpha, Lam, B_measure=res.residual,
        groups=[tubes.GroupRecord(g.t0, g.T1, +1, g.measure, None, g.mask)
                for g in res.groups],
        B_mask=res.B_mask, resolution=res_exp, map_matrix=matrix)
    ctx.check("windows_within_budget", cert.validate_windows(),
              f"budget {cert.window_budget():.3f}, largest window {T}")
    tubes.write_certificate(cert, ctx.path("certificate.json"))
    reloaded = tubes.load_certificate(ctx.path("certificate.json"))
    ctx.check("certificate_reverify",
              tubes.verify_catmap_certificate(reloaded),
              "reloaded certificate re-verified from stored masks")

    # h-sweep: window growing like log(1/h), brackets falling like its inverse sqrt
    N = 2 ** res_exp
    reports = []
    pairs = []
    sweep_brackets = []
    for T_s in [int(t) for t in p["sweep_T_list"]]:
        h_s = math.exp(-T_s * Lam / alpha)
        A0s = tubes.stable_rectangle(toy, p["center"], float(p["sweep_half_stable"]),
                                     float(p["sweep_half_unstable"]), res_exp)
        rs = tubes.contraction_partition(toy, A0s, t0, T_s, eps, seed=ctx.seed)
        nB = int(round(rs.residual * N * N))
        groups = [(int(round(g.measure * N * N)), g.t0, g.T1) for g in rs.groups]
        rep = bounds.tube_bracket(nB, groups, float(p["bracket_R"]),
                                  float(p["bracket_tau"]), 2, 1, h=h_s)
        reports.append(rep)
        pairs.append((h_s, rep.bracket))
        sweep_brackets.append(rep.bracket)
    fit = eigenmodes.scaling_fit(pairs, "PowerTimesSqrtLog")
    ctx.check("sweep_log_exponent", abs(fit.log_correction + 0.5) <= 0.1,
              f"fitted q = {fit.log_correction:.4f}, target -0.5 +- 0.1")
    ctx.check("sweep_monotone",
              all(b2 < b1 for b1, b2 in zip(sweep_brackets, sweep_brackets[1:])),
              "brackets: " + ", ".join("%.5f" % b for b in sweep_brackets))
    ctx.key_numbers["sweep_log_exponent"] = fit.log_correction
    ctx.key_numbers["sweep_plain_exponent"] = fit.exponent
    ctx.key_numbers["sweep_brackets"] = sweep_brackets
    bounds.write_bounds_csv(reports, ctx.path("bounds.csv"))


# -- quantized tube masses ---------------------------------------------------------------

def _single_direction_tube(base, angle: float, R: float, tau: float):
    """One tube around a single conormal direction, wrapped in a Cover."""
    xi = geometry.covector_from_angle(_TORUS, base, angle, 0)
    sample = submanifold.ConormalSample(CotangentPoint(base, xi, 0), 1.0, 0, 0, angle)
    cfg = flow_mod.FlowConfig()
    xs, xis, charts, coords, _ = tubes._skeleton(_TORUS, [sample], tau, R, cfg)
    tube = tubes.Tube(0, sample, R, tau, [0], xs, xis, charts, coords, 0)
    anchor = submanifold.point(_TORUS, base, 0, density=2)
    cover = tubes.Cover(_TORUS, anchor, [tube], R, tau, [sample], [0], 1)
    return tube, cover


def run_tube_mass(ctx: RunContext) -> None:
    p = ctx.params
    parts = list(p["parts"])
    bad = sorted(set(parts) - {"single", "cover", "aligned"})
    if bad:
        raise ConfigError(f"unknown tube_mass parts: {', '.join(bad)}")
    mass_reports = []

    H = submanifold.closed_geodesic(
        _TORUS, CotangentPoint(np.zeros(2), np.array([1.0, 0.0]), 0), 1.0,
        density=20)

    if "single" in parts:
        R, tau = float(p["single_R"]), float(p["single_tau"])
        t0, T1 = (float(v) for v in p["single_window"])
        h, delta = float(p["single_h"]), float(p["single_delta"])
        tube, cover1 = _single_direction_tube(
            np.array([float(v) for v in p["single_base"]]),
            float(p["single_angle"]), R, tau)
        chk = tubes.check_window(cover1, [0], t0, T1)
        ctx.check("single_window_certified", chk.certified,
                  f"window [{t0:g}, {T1:g}] non-self-looping")
        chi = quantize.tube_cutoff(tube, h, delta)
        bound = (t0 / T1) * (1.0 + 1e-2)
        try:
            sup = quantize.time_average_symbol(chi, t0, T1, certificate=chk)
        except AssertionFailure as exc:
            ctx.check("single_sup_bound", False, str(exc))
        else:
            ctx.check("single_sup_bound", sup <= bound,
                      f"sup {sup:.6f} <= {bound:.6f}")
            ctx.key_numbers["single_sup"] = sup

    if "cover" in parts or "aligned" in parts:
        ctx.key_numbers["u_norm_sq"] = 1.0

    if "cover" in parts:
        mvec = [int(v) for v in p["cover_m"]]
        spec = eigenmodes.torus_mode(mvec)
        h = spec.h
        N = int(p["cover_N"])
        R, tau, delta = float(p["cover_R"]), float(p["cover_tau"]), float(p["cover_delta"])
        u = quantize.lattice_mode_field(mvec, h, N)
        # sample spacing matched to the tube radius keeps the overlap
        # multiplicity near one, so the chi^2 mass is not diluted
        cover = tubes.build_cover(H, tau, R, h=h, delta=delta,
                                  density=int(p["cover_density"]))
        syms = _pmap(lambda t: quantize.tube_cutoff(t, h, delta), cover.tubes)
        syms = quantize.normalize_partition(syms)
        rep = quantize.localized_mass(u, syms, None, group="full_cover")
        share = rep.total / rep.u_norm_sq
        ctx.check("cover_mass_lower", share >= 0.5, f"mass share {share:.4f} >= 0.5")
        ctx.check("cover_mass_upper", share <= float(cover.n_colors),
                  f"mass share {share:.4f} <= color budget {cover.n_colors}")
        ctx.key_numbers["cover_mass_share"] = share
        ctx.key_numbers["cover_n_tubes"] = len(cover.tubes)
        ctx.key_numbers["cover_n_colors"] = cover.n_colors
        mass_reports.append(rep)
        if p["dump_field"]:
            quantize.dump_grid(u, ctx.path("field.bin"))

    if "aligned" in parts:
        mvec = [int(v) for v in p["aligned_m"]]
        spec = eigenmodes.torus_mode(mvec)
        h = spec.h
        N = int(p["aligned_N"])
        R, tau, delta = float(p["aligned_R"]), float(p["aligned_tau"]), float(p["aligned_delta"])
        t0, T1 = (float(v) for v in p["aligned_window"])
        u = quantize.lattice_mode_field(mvec, h, N)
        cover = tubes.build_cover(H, tau, R, h=h, delta=delta)
        plus_ids = [t.index for t in cover.tubes if t.center.branch == +1]
        minus_ids = [t.index for t in cover.tubes if t.index not in set(plus_ids)]
        chk = tubes.check_window(cover, plus_ids, t0, T1)
        ctx.check("aligned_window_certified", chk.certified,
                  f"group window [{t0:g}, {T1:g}] over {len(plus_ids)} tubes")
        # opposite-branch cutoffs vanish on this group's frequency window, so
        # normalizing the group alone equals normalizing the full family here
        syms = _pmap(lambda i: quantize.tube_cutoff(cover.tubes[i], h, delta), plus_ids)
        syms = quantize.normalize_partition(syms)
        rep = quantize.localized_mass(u, syms, certificate=chk, group="aligned")
        ctx.check("aligned_ratio", rep.ratio <= 1.5,
                  f"mass over (t0/T)||u||^2 = {rep.ratio:.4f} <= 1.5")
        ctx.key_numbers["aligned_ratio"] = rep.ratio
        ctx.key_numbers["aligned_n_tubes"] = len(plus_ids)
        mass_reports.append(rep)

        samples = H.conormal()
        w_plus = sum(s.weight for s in samples if s.branch == +1)
        w_total = sum(s.weight for s in samples)
        cert = tubes.PartitionCertificate(
            "tubes", h, float(p["alpha"]),
            max(flow_mod.max_expansion_rate(_TORUS), 0.05),
            B_measure=w_total - w_plus,
            groups=[tubes.GroupRecord(t0, T1, +1, w_plus, tube_indices=plus_ids)],
            B_indices=minus_ids, R=R, tau=tau, delta=delta)
        tubes.write_certificate(cert, ctx.path("certificate.json"))
        reloaded = tubes.load_certificate(ctx.path("certificate.json"))
        ctx.check("tube_certificate_reverify",
                  tubes.verify_tube_certificate(reloaded, cover),
                  "stored group windows re-checked against the cover")

    if mass_reports:
        quantize.write_mass_csv(mass_reports, ctx.path("mass.csv"))


# -- conjugate points and shrinking-window certificates ----------------------------------

def run_conjugacy(ctx: RunContext) -> None:
    p = ctx.params
    t_max = float(p["t_max"])
    x0 = np.array([1.1, 0.8])
    rows = []

    rho_s = CotangentPoint(x0, geometry.covector_from_angle(_SPHERE, x0, 0.6, 0), 0)
    rep_s = returns.conjugate_points(_SPHERE, rho_s, (0.0, t_max))
    expected_count = int(t_max / math.pi)
    ctx.check("sphere_event_count", len(rep_s.events) == expected_count,
              f"{len(rep_s.events)} events, expected {expected_count}")
    worst = 0.0
    for i, (t, mult) in enumerate(rep_s.events):
        gap = abs(t - (i + 1) * math.pi)
        worst = max(worst, gap)
        rows.append(("sphere", i, t, mult))
    ctx.check("sphere_event_times", worst <= 1e-6,
              f"max |t_m - m pi| = {worst:.3e}")
    ctx.key_numbers["sphere_event_max_err"] = worst

    rho_t = CotangentPoint(np.array([0.2, 0.3]),
                           geometry.covector_from_angle(_TORUS, [0.2, 0.3], 0.7, 0), 0)
    rep_t = returns.conjugate_points(_TORUS, rho_t, (0.0, t_max))
    ctx.check("torus_no_events", len(rep_t.events) == 0,
              f"{len(rep_t.events)} events on the flat torus")
    for i, (t, mult) in enumerate(rep_t.events):
        rows.append(("torus", i, t, mult))

    cert_T = float(p["cert_T"])
    a = float(p["decay_rate"])
    nd = int(p["n_directions"])
    cert_s = returns.conjugacy_certificate(_SPHERE, [(x0, 0)], cert_T, a,
                                           n_directions=nd)
    ctx.check("sphere_certificate_fails", not cert_s.holds,
              f"{len(cert_s.witnesses)} witnesses found")
    if cert_s.witnesses:
        t_near = min(abs(w[3] - 2.0 * math.pi) for w in cert_s.witnesses)
        ctx.check("sphere_witness_near_loop", t_near <= 1e-2,
                  f"closest witness time to 2 pi: {t_near:.4e}")
        ctx.key_numbers["witness_gap_to_loop"] = t_near
        for j, w in enumerate(cert_s.witnesses):
            rows.append(("sphere_witness", j, w[3], 1))

    cert_t = returns.conjugacy_certificate(_TORUS, [(np.array([0.2, 0.3]), 0)],
                                           cert_T, a, n_directions=nd)
    ctx.check("torus_certificate_holds", cert_t.holds,
              f"{len(cert_t.witnesses)} witnesses on the flat torus")

    _write_rows(ctx.path("conjugacy.csv"),
                ["case", "event_index", "t", "multiplicity"], rows)


# -- invariant-measure thickenings ---------------------------------------------------------

def run_mu_thicken(ctx: RunContext) -> None:
    p = ctx.params
    H = submanifold.closed_geodesic(
        _TORUS, CotangentPoint(np.array([0.0, float(p["curve_x2"])]),
                               np.array([1.0, 0.0]), 0), 1.0,
        density=int(p["liouville_density"]))
    deltas = [float(d) for d in p["liouville_deltas"]]
    prox = float(p["liouville_prox"])
    mu = bounds.liouville_measure(_TORUS, n=int(p["n_liouville"]), seed=ctx.seed)
    lim_full, est_full = bounds.thicken_measure(mu, H, None, deltas, prox)
    lim_half, est_half = bounds.thicken_measure(
        mu, H, lambda rho: rho.x[0] < 0.5, deltas, prox)
    ratio = lim_half / lim_full
    n_hits = est_full[-1] * 2.0 * deltas[-1] * int(p["n_liouville"])
    sigma = math.sqrt(0.25 / max(n_hits, 1.0))
    ctx.check("liouville_matches_conormal", abs(ratio - 0.5) <= 3.0 * sigma,
              f"sub-curve share {ratio:.4f} vs 0.5, 3 sigma = {3 * sigma:.4f}")
    ctx.key_numbers["liouville_ratio"] = ratio
    ctx.key_numbers["liouville_sigma"] = sigma
    ctx.key_numbers["liouville_limit"] = lim_full

    orbit_seed = CotangentPoint(np.array([float(p["orbit_x1"]), 0.0]),
                                np.array([0.0, 1.0]), 0)
    mu_orb = bounds.periodic_orbit_measure(_TORUS, orbit_seed, 1.0,
                                           n=int(p["orbit_n"]))
    orbit_deltas = [float(d) for d in p["orbit_deltas"]]
    lim_orb, est_orb = bounds.thicken_measure(
        mu_orb, H, None, orbit_deltas, float(p["orbit_prox"]),
        density=int(p["orbit_density"]))
    expected = 1.0    # one transversal crossing per unit of period
    rel = abs(lim_orb - expected) / expected
    ctx.check("orbit_crossing_density", rel <= 0.02,
              f"limit {lim_orb:.5f} vs {expected:g}, relative error {rel:.4f}")
    ctx.key_numbers["orbit_limit"] = lim_orb

    rows = []
    for d, e in zip(deltas, est_full):
        rows.append(("liouville_full", d, e, lim_full, ""))
    for d, e in zip(deltas, est_half):
        rows.append(("liouville_half", d, e, lim_half, ""))
    for d, e in zip(orbit_deltas, est_orb):
        rows.append(("orbit", d, e, lim_orb, expected))
    _write_rows(ctx.path("thicken.csv"),
                ["case", "delta", "estimate", "limit", "expected"], rows)


# -- registry and orchestration --------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentDef:
    name: str
    runner: object
    description: str
    column_tolerances: dict = field(default_factory=dict)


EXPERIMENTS = {
    "zonal_sup": ExperimentDef(
        "zonal_sup", run_zonal_sup,
        "sup-norm growth of zonal or highest-weight sphere modes, with the "
        "equator integral floor"),
    "beam_restriction": ExperimentDef(
        "beam_restriction", run_beam_restriction,
        "planar beam crossing integrals: normal-incidence h^{1/4} law and "
        "oblique suppression"),
    "torus_average": ExperimentDef(
        "torus_average", run_torus_average,
        "lattice-mode averages over a closed geodesic: exact 0/1 selection"),
    "sphere_returns": ExperimentDef(
        "sphere_returns", run_sphere_returns,
        "first-return times of conormal flows and return-map measure "
        "invariance"),
    "cover_partition": ExperimentDef(
        "cover_partition", run_cover_partition,
        "staged-limit bracket ladder over a conormal ball cover (no "
        "inversions)"),
    "catmap_contraction": ExperimentDef(
        "catmap_contraction", run_catmap_contraction,
        "hyperbolic toy-map contraction partition, certificate, and "
        "inverse-sqrt-log h-sweep"),
    "tube_mass": ExperimentDef(
        "tube_mass", run_tube_mass,
        "quantized tube cutoff masses: window-averaged symbol bound, full "
        "cover share, aligned-group ratio"),
    "conjugacy": ExperimentDef(
        "conjugacy", run_conjugacy,
        "conjugate-point events on the sphere and torus with "
        "shrinking-window certificates"),
    "mu_thicken": ExperimentDef(
        "mu_thicken", run_mu_thicken,
        "transversal thickened measures: Liouville vs conormal proportions "
        "and periodic-orbit crossing density"),
}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Execute one named pipeline and atomically publish its output directory.

    Returns the manifest tree.  Raises AssertionFailure after the outputs are
    finalized when any recorded check failed and the config says to enforce.
    """
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    exp = EXPERIMENTS[cfg.experiment]
    out = Path(cfg.output_dir)
    tmp = Path(str(out) + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    ctx = RunContext(tmp, cfg.seed, cfg.params)
    start = time.perf_counter()
    try:
        exp.runner(ctx)
        wall = time.perf_counter() - start
        files = {}
        for f in sorted(tmp.iterdir()):
            if f.is_file():
                files[f.name] = {"sha256": _sha256(f), "bytes": f.stat().st_size}
        manifest = {
            "manifest_schema": MANIFEST_SCHEMA,
            "experiment": cfg.experiment,
            "config_sha256": cfg.source_sha256,
            "code_version": code_version(),
            "backend": kernels.backend_name(),
            "seed": cfg.seed,
            "params": cfg.params,
            "files": files,
            "key_numbers": ctx.key_numbers,
            "asserts": ctx.asserts,
            "warnings": ctx.warnings,
            "wall_time_s": wall,
        }
        with open(tmp / MANIFEST_NAME, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    failed = ctx.failed_names()
    if failed and cfg.params.get("enforce", True):
        raise AssertionFailure(
            f"{cfg.experiment}: {len(failed)} failed check(s): {', '.join(failed)}")
    return manifest


# -- manifest comparison ----------------------------------------------------------------------

DEFAULT_ABS_TOL = 1e-12
DEFAULT_REL_TOL = 1e-9


def _load_manifest(path: Path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        with open(path) as fh:
            return json.load(fh), path.parent
    except OSError as exc:
        raise SchemaMismatch(f"cannot read manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"manifest is not valid JSON: {exc}") from exc


def _numbers_close(a: float, b: float, abs_tol: float, rel_tol: float) -> bool:
    if math.isnan(a) and math.isnan(b):
        return True
    return abs(a - b) <= abs_tol + rel_tol * max(abs(a), abs(b))


def _compare_csv(name, path_a, path_b, tols, diffs) -> None:
    rows_a = [line.rstrip("\n").split(",") for line in open(path_a)]
    rows_b = [line.rstrip("\n").split(",") for line in open(path_b)]
    if not rows_a or not rows_b or rows_a[0] != rows_b[0]:
        diffs.append((name, "header", "-", "column sets differ"))
        return
    header = rows_a[0]
    if len(rows_a) != len(rows_b):
        diffs.append((name, "rows", "-",
                      f"{len(rows_a) - 1} vs {len(rows_b) - 1} data rows"))
        return
    for r, (ra, rb) in enumerate(zip(rows_a[1:], rows_b[1:]), start=2):
        if len(ra) != len(rb):
            diffs.append((name, f"line {r}", "-", "cell counts differ"))
            continue
        for col, (ca, cb) in zip(header, zip(ra, rb)):
            if ca == cb:
                continue
            abs_tol, rel_tol = tols.get(col, (DEFAULT_ABS_TOL, DEFAULT_REL_TOL))
            try:
                fa, fb = float(ca), float(cb)
            except ValueError:
                diffs.append((name, f"line {r}", col, f"{ca!r} vs {cb!r}"))
                continue
            if not _numbers_close(fa, fb, abs_tol, rel_tol):
                diffs.append((name, f"line {r}", col,
                              f"{fa:.17g} vs {fb:.17g}"))


def compare_manifests(path_a, path_b) -> list:
    """Field-wise diff of two runs of the same experiment.

    Returns a list of (file, location, column, message) drift rows; empty
    means the runs agree within the experiment's column tolerances.
    """
    man_a, dir_a = _load_manifest(path_a)
    man_b, dir_b = _load_manifest(path_b)
    for key in ("manifest_schema", "experiment"):
        if man_a.get(key) != man_b.get(key):
            raise SchemaMismatch(
                f"{key} differs: {man_a.get(key)!r} vs {man_b.get(key)!r}")
    name = man_a["experiment"]
    tols = EXPERIMENTS[name].column_tolerances if name in EXPERIMENTS else {}

    diffs = []
    files_a, files_b = man_a.get("files", {}), man_b.get("files", {})
    for missing in sorted(set(files_a) - set(files_b)):
        diffs.append((missing, "-", "-", "only in first run"))
    for missing in sorted(set(files_b) - set(files_a)):
        diffs.append((missing, "-", "-", "only in second run"))
    for fname in sorted(set(files_a) & set(files_b)):
        if files_a[fname]["sha256"] == files_b[fname]["sha256"]:
            continue
        pa, pb = dir_a / fname, dir_b / fname
        if fname.endswith(".csv") and pa.exists() and pb.exists():
            _compare_csv(fname, pa, pb, tols, diffs)
        else:
            diffs.append((fname, "-", "-", "checksums differ"))

    kn_a, kn_b = man_a.get("key_numbers", {}), man_b.get("key_numbers", {})
    for key in sorted(set(kn_a) | set(kn_b)):
        if key not in kn_a or key not in kn_b:
            diffs.append((MANIFEST_NAME, "key_numbers", key, "missing on one side"))
            continue
        va, vb = kn_a[key], kn_b[key]
        pa_list = va if isinstance(va, list) else [va]
        pb_list = vb if isinstance(vb, list) else [vb]
        if len(pa_list) != len(pb_list):
            diffs.append((MANIFEST_NAME, "key_numbers", key, "lengths differ"))
            continue
        for i, (va_i, vb_i) in enumerate(zip(pa_list, pb_list)):
            try:
                fa, fb = float(va_i), float(vb_i)
            except (TypeError, ValueError):
                if va_i != vb_i:
                    diffs.append((MANIFEST_NAME, "key_numbers", key,
                                  f"{va_i!r} vs {vb_i!r}"))
                continue
            if not _numbers_close(fa, fb, DEFAULT_ABS_TOL, DEFAULT_REL_TOL):
                diffs.append((MANIFEST_NAME, "key_numbers",
                              key if len(pa_list) == 1 else f"{key}[{i}]",
                              f"{fa:.17g} vs {fb:.17g}"))
    return diffs
