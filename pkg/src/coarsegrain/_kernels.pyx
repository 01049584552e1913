# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. See ``_kernels_py`` for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, isfinite

cnp.import_array()

BACKEND = "cython"


def em_double_well(double x0, double dt, const double[::1] noise):
    cdef Py_ssize_t n = noise.shape[0] + 1
    cdef Py_ssize_t i
    cdef double x = x0, g, f
    cdef long bad = -1
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    o[0] = x
    if not isfinite(x):
        return out, 0
    with nogil:
        for i in range(1, n):
            g = 4.0 - 1.25 * x * x
            if g < 0.0:
                g = 0.0
            f = 4.0 * (x - x * x * x)
            x = x + dt * f + sqrt(dt * g) * noise[i - 1]
            o[i] = x
            if not isfinite(x):
                bad = i
                break
    return out, bad


def nw_fields(const double[:, ::1] zq, const double[:, ::1] zc,
              const double[:, ::1] inc, const double[::1] coef,
              double dt, double floor, bint with_grad):
    cdef Py_ssize_t nq = zq.shape[0], m = zc.shape[0], d = zq.shape[1]
    cdef Py_ssize_t q, i, j, k
    cdef double e, emin, s, t, wi, r

    drift_a = np.empty((nq, d))
    diff_a = np.empty((nq, d))
    flags_a = np.zeros(nq, dtype=np.uint8)
    jf_a = np.zeros((nq, d, d)) if with_grad else None
    jg_a = np.zeros((nq, d, d)) if with_grad else None
    cdef double[:, ::1] drift = drift_a
    cdef double[:, ::1] diff = diff_a
    cdef unsigned char[::1] flags = flags_a
    cdef double[:, :, ::1] jf
    cdef double[:, :, ::1] jg
    if with_grad:
        jf = jf_a
        jg = jg_a

    w_a = np.empty(m)
    cdef double[::1] w = w_a
    # per-query accumulators: abar[j], sum w*a_j*inc_k, sum w*a_j*r_k^2
    acc_a = np.empty(d + 2 * d * d + 2 * d)
    cdef double[::1] acc = acc_a
    cdef Py_ssize_t o_abar = 0, o_fa = d, o_ga = d + d * d
    cdef Py_ssize_t o_f = d + 2 * d * d, o_g = o_f + d

    with nogil:
        for q in range(nq):
            emin = 1e308
            for i in range(m):
                e = 0.0
                for j in range(d):
                    t = zq[q, j] - zc[i, j]
                    e = e + t * t * coef[j]
                w[i] = e
                if e < emin:
                    emin = e
            flags[q] = exp(-emin) == 0.0
            s = 0.0
            for i in range(m):
                wi = exp(-(w[i] - emin))
                w[i] = wi
                s = s + wi
            for k in range(d + 2 * d * d + 2 * d):
                acc[k] = 0.0
            for i in range(m):
                wi = w[i] / s
                w[i] = wi
                for k in range(d):
                    acc[o_f + k] += wi * inc[i, k]
                if with_grad:
                    for j in range(d):
                        acc[o_abar + j] += wi * (-2.0 * coef[j] * (zq[q, j] - zc[i, j]))
            for k in range(d):
                drift[q, k] = acc[o_f + k] / dt
            for i in range(m):
                wi = w[i]
                for k in range(d):
                    r = inc[i, k] - dt * drift[q, k]
                    acc[o_g + k] += wi * r * r
                    if with_grad:
                        for j in range(d):
                            t = wi * (-2.0 * coef[j] * (zq[q, j] - zc[i, j]) - acc[o_abar + j])
                            acc[o_fa + k * d + j] += t * inc[i, k]
                            acc[o_ga + k * d + j] += t * r * r
            for k in range(d):
                t = acc[o_g + k] / dt
                if t < floor:
                    diff[q, k] = floor
                    if with_grad:
                        for j in range(d):
                            jf[q, k, j] = acc[o_fa + k * d + j] / dt
                else:
                    diff[q, k] = t
                    if with_grad:
                        for j in range(d):
                            jf[q, k, j] = acc[o_fa + k * d + j] / dt
                            jg[q, k, j] = acc[o_ga + k * d + j] / dt
    return drift_a, diff_a, jf_a, jg_a, flags_a.astype(bool)
