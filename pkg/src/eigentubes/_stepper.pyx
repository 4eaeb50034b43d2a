# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implicit-midpoint integrator for the conformal torus.

This is the hot kernel behind geodesic_flow / tangent_flow on the numeric
model.  It mirrors ``eigentubes._stepper_py`` step for step and must keep the
same constants; the fallback is the reference for behavior.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, fabs, sin, sqrt

cnp.import_array()

BACKEND = "compiled"

cdef int FP_MAX_ITER = 30
cdef double FP_RTOL = 1e-15
cdef double SAFETY = 0.25
cdef int MAX_HALVINGS = 60
# Roundoff floor for the normalized step-doubling error estimate; without it
# the clamped final step toward t_to can be rejected forever once its truncation
# error drops to noise level.  Must match _stepper_py._ERR_FLOOR.
cdef double ERR_FLOOR = 32.0 * 2.220446049250313e-16


cdef inline void c_field(double a, double w, double* z, double* out) noexcept nogil:
    cdef double f = a * cos(w * z[0])
    cdef double e2 = exp(-2.0 * f)
    cdef double df = -a * w * sin(w * z[0])
    cdef double n2 = z[2] * z[2] + z[3] * z[3]
    out[0] = e2 * z[2]
    out[1] = e2 * z[3]
    out[2] = df * e2 * n2
    out[3] = 0.0


cdef inline void c_field_jacobian(double a, double w, double* z, double* A) noexcept nogil:
    cdef double f = a * cos(w * z[0])
    cdef double e2 = exp(-2.0 * f)
    cdef double df = -a * w * sin(w * z[0])
    cdef double ddf = -a * w * w * cos(w * z[0])
    cdef double n2 = z[2] * z[2] + z[3] * z[3]
    cdef int i
    for i in range(16):
        A[i] = 0.0
    A[0 * 4 + 0] = -2.0 * df * e2 * z[2]
    A[0 * 4 + 2] = e2
    A[1 * 4 + 0] = -2.0 * df * e2 * z[3]
    A[1 * 4 + 3] = e2
    A[2 * 4 + 0] = (ddf - 2.0 * df * df) * e2 * n2
    A[2 * 4 + 2] = 2.0 * df * e2 * z[2]
    A[2 * 4 + 3] = 2.0 * df * e2 * z[3]


cdef inline double c_conorm(double a, double w, double* z) noexcept nogil:
    cdef double f = a * cos(w * z[0])
    return exp(-f) * sqrt(z[2] * z[2] + z[3] * z[3])


cdef int c_solve_4x4(double* M, double* B, double* X) noexcept nogil:
    """Solve M X = B for 4x4 matrices (row-major) with partial pivoting."""
    cdef double aug[4][8]
    cdef int i, j, k, piv
    cdef double best, factor, tmp
    for i in range(4):
        for j in range(4):
            aug[i][j] = M[i * 4 + j]
            aug[i][j + 4] = B[i * 4 + j]
    for k in range(4):
        piv = k
        best = fabs(aug[k][k])
        for i in range(k + 1, 4):
            if fabs(aug[i][k]) > best:
                best = fabs(aug[i][k])
                piv = i
        if best == 0.0:
            return 1
        if piv != k:
            for j in range(8):
                tmp = aug[k][j]
                aug[k][j] = aug[piv][j]
                aug[piv][j] = tmp
        for i in range(k + 1, 4):
            factor = aug[i][k] / aug[k][k]
            for j in range(k, 8):
                aug[i][j] -= factor * aug[k][j]
    for k in range(3, -1, -1):
        for j in range(4):
            tmp = aug[k][j + 4]
            for i in range(k + 1, 4):
                tmp -= aug[k][i] * X[i * 4 + j]
            X[k * 4 + j] = tmp / aug[k][k]
    return 0


cdef inline void c_matmul(double* A, double* B, double* C) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(4):
        for j in range(4):
            s = 0.0
            for k in range(4):
                s += A[i * 4 + k] * B[k * 4 + j]
            C[i * 4 + j] = s


cdef int c_midpoint_step(double a, double w, double* z, double dt, bint want_jac,
                         double* z_out, double* cay) noexcept nogil:
    cdef double mid[4]
    cdef double nxt[4]
    cdef double fz[4]
    cdef double A[16]
    cdef double B1[16]
    cdef double B2[16]
    cdef int it, i, j
    cdef double delta, scale
    cdef bint converged = False
    c_field(a, w, z, fz)
    for i in range(4):
        mid[i] = z[i] + 0.5 * dt * fz[i]
    for it in range(FP_MAX_ITER):
        c_field(a, w, mid, fz)
        delta = 0.0
        scale = 0.0
        for i in range(4):
            nxt[i] = z[i] + 0.5 * dt * fz[i]
            if fabs(nxt[i] - mid[i]) > delta:
                delta = fabs(nxt[i] - mid[i])
            mid[i] = nxt[i]
            if fabs(mid[i]) > scale:
                scale = fabs(mid[i])
        if delta < FP_RTOL * (1.0 + scale):
            converged = True
            break
    if not converged:
        return 1
    for i in range(4):
        z_out[i] = 2.0 * mid[i] - z[i]
    if want_jac:
        c_field_jacobian(a, w, mid, A)
        for i in range(4):
            for j in range(4):
                B1[i * 4 + j] = (1.0 if i == j else 0.0) - 0.5 * dt * A[i * 4 + j]
                B2[i * 4 + j] = (1.0 if i == j else 0.0) + 0.5 * dt * A[i * 4 + j]
        if c_solve_4x4(B1, B2, cay) != 0:
            return 1
    return 0


cdef int c_advance(double a, double q, double* z, double t_from, double t_to,
                   double step, double tol, bint renormalize, bint want_jac,
                   double* jac, double* drift_out, long* nsteps_out) noexcept nogil:
    cdef double w = 2.0 * 3.14159265358979323846 * q
    cdef double span = t_to - t_from
    cdef double zfull[4]
    cdef double zh1[4]
    cdef double zh2[4]
    cdef double cay1[16]
    cdef double cay2[16]
    cdef double tmp[16]
    cdef double sgn, t, dt, c_ref, drift, err, zscale, c, limit
    cdef long n_steps = 0
    cdef int fails = 0, i
    cdef bint ok
    drift_out[0] = 0.0
    nsteps_out[0] = 0
    if span == 0.0:
        return 0
    sgn = 1.0 if span > 0 else -1.0
    t = t_from
    dt = sgn * (step if step < fabs(span) else fabs(span))
    c_ref = c_conorm(a, w, z)
    drift = 0.0
    limit = 1.0 if fabs(t_to) < 1.0 else fabs(t_to)
    while sgn * (t_to - t) > 1e-14 * limit:
        if fabs(t_to - t) < fabs(dt):
            dt = sgn * fabs(t_to - t)
        ok = c_midpoint_step(a, w, z, dt, False, zfull, tmp) == 0
        if ok:
            ok = c_midpoint_step(a, w, z, 0.5 * dt, want_jac, zh1, cay1) == 0
        if ok:
            ok = c_midpoint_step(a, w, zh1, 0.5 * dt, want_jac, zh2, cay2) == 0
        err = 0.0
        if ok:
            zscale = 0.0
            for i in range(4):
                if fabs(zfull[i] - zh2[i]) > err:
                    err = fabs(zfull[i] - zh2[i])
                if fabs(z[i]) > zscale:
                    zscale = fabs(z[i])
            err /= 1.0 + zscale
            ok = err <= SAFETY * tol * fabs(dt) + ERR_FLOOR
        if not ok:
            dt *= 0.5
            fails += 1
            if fails > MAX_HALVINGS:
                return 2
            continue
        fails = 0
        for i in range(4):
            z[i] = zh2[i]
        if want_jac:
            c_matmul(cay2, cay1, tmp)
            c_matmul(tmp, jac, cay1)
            for i in range(16):
                jac[i] = cay1[i]
        t += dt
        n_steps += 1
        c = c_conorm(a, w, z)
        if fabs(c - c_ref) > drift:
            drift = fabs(c - c_ref)
        if renormalize and c > 0.0:
            z[2] /= c
            z[3] /= c
        if err <= SAFETY * tol * fabs(dt) / 32.0 + ERR_FLOOR and fabs(dt) < step:
            dt = sgn * (2.0 * fabs(dt) if 2.0 * fabs(dt) < step else step)
    drift_out[0] = drift
    nsteps_out[0] = n_steps
    return 0


def conformal_flow(double a, double q, z0, double t, double step, double tol,
                   bint renormalize, bint want_jac):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] z = np.array(z0, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] jac = np.eye(4)
    cdef double drift = 0.0
    cdef long n_steps = 0
    cdef int status
    status = c_advance(a, q, &z[0], 0.0, t, step, tol, renormalize, want_jac,
                       &jac[0, 0], &drift, &n_steps)
    if status != 0:
        raise RuntimeError("step size underflow in implicit midpoint driver")
    return z, (jac if want_jac else None), drift, n_steps


def conformal_flow_dense(double a, double q, z0, ts, double step, double tol,
                         bint renormalize):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tarr = np.asarray(ts, dtype=np.float64)
    diffs = np.diff(np.concatenate([[0.0], tarr]))
    if not (np.all(diffs >= 0.0) or np.all(diffs <= 0.0)):
        raise ValueError("dense time grid must be monotone starting from 0")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] z = np.array(z0, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((tarr.shape[0], 4))
    cdef double jac_dummy[16]
    cdef double drift = 0.0, seg_drift = 0.0, t_prev = 0.0
    cdef long n_steps = 0
    cdef int status
    cdef Py_ssize_t i, j
    for i in range(tarr.shape[0]):
        status = c_advance(a, q, &z[0], t_prev, tarr[i], step, tol, renormalize,
                           False, jac_dummy, &seg_drift, &n_steps)
        if status != 0:
            raise RuntimeError("step size underflow in implicit midpoint driver")
        if seg_drift > drift:
            drift = seg_drift
        for j in range(4):
            out[i, j] = z[j]
        t_prev = tarr[i]
    return out, drift
