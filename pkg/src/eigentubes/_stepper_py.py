"""Pure-Python fallback integrator for the conformal torus.

Implicit-midpoint stepping with step doubling for error control.  The
variational (tangent) update uses the Cayley factor of the midpoint Jacobian,
so the propagated 4x4 map stays exactly symplectic for each accepted step.

The compiled module ``eigentubes._stepper`` implements the same algorithm
with the same constants; results agree to rounding noise.  Keep the two in
sync when changing anything here.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"

_FP_MAX_ITER = 30
_FP_RTOL = 1e-15
_SAFETY = 0.25
_MAX_CONSECUTIVE_HALVINGS = 60
# Absolute floor for the step-doubling error estimate.  The estimate is
# normalized by (1 + |z|), so once a clamped step shrinks enough its value is
# pure roundoff noise that no longer scales with dt; without the floor the
# final step before t_to can be rejected forever while t stalls below one ulp.
_ERR_FLOOR = 32.0 * 2.220446049250313e-16


def _field(a: float, w: float, z: np.ndarray) -> np.ndarray:
    f = a * math.cos(w * z[0])
    e2 = math.exp(-2.0 * f)
    df = -a * w * math.sin(w * z[0])
    n2 = z[2] * z[2] + z[3] * z[3]
    return np.array([e2 * z[2], e2 * z[3], df * e2 * n2, 0.0])


def _field_jacobian(a: float, w: float, z: np.ndarray) -> np.ndarray:
    f = a * math.cos(w * z[0])
    e2 = math.exp(-2.0 * f)
    df = -a * w * math.sin(w * z[0])
    ddf = -a * w * w * math.cos(w * z[0])
    n2 = z[2] * z[2] + z[3] * z[3]
    A = np.zeros((4, 4))
    A[0, 0] = -2.0 * df * e2 * z[2]
    A[0, 2] = e2
    A[1, 0] = -2.0 * df * e2 * z[3]
    A[1, 3] = e2
    A[2, 0] = (ddf - 2.0 * df * df) * e2 * n2
    A[2, 2] = 2.0 * df * e2 * z[2]
    A[2, 3] = 2.0 * df * e2 * z[3]
    return A


def _conorm(a: float, w: float, z: np.ndarray) -> float:
    f = a * math.cos(w * z[0])
    return math.exp(-f) * math.hypot(z[2], z[3])


def _midpoint_step(a, w, z, dt, want_jac):
    """One implicit-midpoint step; returns (z_new, cayley or None) or None."""
    mid = z + 0.5 * dt * _field(a, w, z)
    converged = False
    for _ in range(_FP_MAX_ITER):
        nxt = z + 0.5 * dt * _field(a, w, mid)
        delta = float(np.max(np.abs(nxt - mid)))
        mid = nxt
        if delta < _FP_RTOL * (1.0 + float(np.max(np.abs(mid)))):
            converged = True
            break
    if not converged:
        return None
    z_new = 2.0 * mid - z
    cay = None
    if want_jac:
        A = _field_jacobian(a, w, mid)
        eye = np.eye(4)
        cay = np.linalg.solve(eye - 0.5 * dt * A, eye + 0.5 * dt * A)
    return z_new, cay


def _advance(a, q, z, t_from, t_to, step, tol, renormalize, want_jac):
    """Integrate z from t_from to t_to.  Returns (z, jac, drift, n_steps)."""
    w = 2.0 * math.pi * q
    jac = np.eye(4) if want_jac else None
    span = t_to - t_from
    if span == 0.0:
        return z.copy(), jac, 0.0, 0
    sgn = 1.0 if span > 0 else -1.0
    t = t_from
    dt = sgn * min(step, abs(span))
    c_ref = _conorm(a, w, z)
    drift = 0.0
    n_steps = 0
    fails = 0
    z = z.copy()
    while sgn * (t_to - t) > 1e-14 * max(1.0, abs(t_to)):
        dt = sgn * min(abs(dt), abs(t_to - t))
        full = _midpoint_step(a, w, z, dt, False)
        half1 = _midpoint_step(a, w, z, 0.5 * dt, want_jac)
        ok = full is not None and half1 is not None
        if ok:
            half2 = _midpoint_step(a, w, half1[0], 0.5 * dt, want_jac)
            ok = half2 is not None
        if ok:
            err = float(np.max(np.abs(full[0] - half2[0])))
            err /= 1.0 + float(np.max(np.abs(z)))
            ok = err <= _SAFETY * tol * abs(dt) + _ERR_FLOOR
        if not ok:
            dt *= 0.5
            fails += 1
            if fails > _MAX_CONSECUTIVE_HALVINGS:
                raise RuntimeError("step size underflow in implicit midpoint driver")
            continue
        fails = 0
        z = half2[0]
        if want_jac:
            jac = half2[1] @ half1[1] @ jac
        t += dt
        n_steps += 1
        drift = max(drift, abs(_conorm(a, w, z) - c_ref))
        if renormalize:
            c = _conorm(a, w, z)
            if c > 0.0:
                z[2] /= c
                z[3] /= c
        if err <= _SAFETY * tol * abs(dt) / 32.0 + _ERR_FLOOR and abs(dt) < step:
            dt = sgn * min(2.0 * abs(dt), step)
    return z, jac, drift, n_steps


def conformal_flow(a, q, z0, t, step, tol, renormalize, want_jac):
    z0 = np.asarray(z0, dtype=float)
    return _advance(a, q, z0, 0.0, float(t), step, tol, renormalize, want_jac)


def conformal_flow_dense(a, q, z0, ts, step, tol, renormalize):
    """Trajectory at the given monotone times (all >= 0 or all <= 0)."""
    ts = np.asarray(ts, dtype=float)
    diffs = np.diff(np.concatenate([[0.0], ts]))
    if not (np.all(diffs >= 0.0) or np.all(diffs <= 0.0)):
        raise ValueError("dense time grid must be monotone starting from 0")
    out = np.empty((len(ts), 4))
    z = np.asarray(z0, dtype=float).copy()
    drift = 0.0
    t_prev = 0.0
    for i, tt in enumerate(ts):
        z, _, d, _ = _advance(a, q, z, t_prev, float(tt), step, tol, renormalize, False)
        drift = max(drift, d)
        out[i] = z
        t_prev = float(tt)
    return out, drift
