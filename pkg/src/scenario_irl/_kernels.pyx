# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Bellman kernels."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, erfc, exp, fmax, fmin, M_SQRT1_2

cnp.import_array()

cdef enum:
    MAXPOW = 16


def bellman_backup(const double[:, ::1] cost, const double[::1] ev, const cnp.int64_t[:, ::1] row_index,
                   double gamma):
    """Fused ``min_a cost[s, a] + gamma * ev[row_index[s, a]]`` with lowest-index argmin."""
    cdef Py_ssize_t S = cost.shape[0], A = cost.shape[1], s, a
    cdef double best, q
    cdef cnp.int64_t arg
    out = np.empty(S, dtype=np.float64)
    pol = np.empty(S, dtype=np.int64)
    cdef double[::1] v = out
    cdef cnp.int64_t[::1] p = pol
    with nogil:
        for s in range(S):
            best = cost[s, 0] + gamma * ev[row_index[s, 0]]
            arg = 0
            for a in range(1, A):
                q = cost[s, a] + gamma * ev[row_index[s, a]]
                if q < best:
                    best = q
                    arg = a
            v[s] = best
            p[s] = arg
    return out, pol


def sup_diff(const double[::1] x, const double[::1] y):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double m = 0.0, d
    with nogil:
        for i in range(n):
            d = fabs(x[i] - y[i])
            if d > m:
                m = d
    return m


cdef inline double _phi_diff(double lo, double hi) nogil:
    # Phi(hi) - Phi(lo) evaluated on the side of the smaller tail
    if lo > 0:
        return 0.5 * (erfc(lo * M_SQRT1_2) - erfc(hi * M_SQRT1_2))
    return 0.5 * (erfc(-hi * M_SQRT1_2) - erfc(-lo * M_SQRT1_2))


def lqg_residuals(const double[:, ::1] pts, const cnp.int64_t[:, ::1] cost_exp, const double[::1] alpha,
                  const cnp.int64_t[::1] value_exp, const double[::1] beta,
                  double A, double B, double mu, double sigma, double L, double gamma):
    """``c(x, a) - T*u(x, a)`` for monomial bases under the truncated LQG kernel."""
    cdef Py_ssize_t n = pts.shape[0], nc = cost_exp.shape[0], nu = value_exp.shape[0], i, j, k
    cdef double x, a, c, m, lo, hi, z, pa, pb, ez, ez2, cc, t
    cdef double inv_sqrt_2pi = 0.3989422804014327
    cdef double xp[MAXPOW]
    cdef double ap[MAXPOW]
    cdef double mom[3]
    cdef long top = 0
    for j in range(nc):
        top = max(top, cost_exp[j, 0], cost_exp[j, 1])
    for j in range(nu):
        if value_exp[j] > 2:
            raise ValueError("value exponents above 2 have no closed-form moment here")
        top = max(top, value_exp[j])
    if top >= MAXPOW:
        raise ValueError(f"exponents must be below {MAXPOW}")
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] r = out
    with nogil:
        for i in range(n):
            x = pts[i, 0]
            a = pts[i, 1]
            xp[0] = 1.0
            ap[0] = 1.0
            for k in range(1, top + 1):
                xp[k] = xp[k - 1] * x
                ap[k] = ap[k - 1] * a
            c = 0.0
            for j in range(nc):
                c += alpha[j] * xp[cost_exp[j, 0]] * ap[cost_exp[j, 1]]
            m = A * x + B * a
            if m > L:
                m = L
            elif m < -L:
                m = -L
            lo = (fmax(-L, -L - m) - mu) / sigma
            hi = (fmin(L, L - m) - mu) / sigma
            z = _phi_diff(lo, hi)
            pa = inv_sqrt_2pi * exp(-0.5 * lo * lo)
            pb = inv_sqrt_2pi * exp(-0.5 * hi * hi)
            ez = (pa - pb) / z
            ez2 = 1.0 + (lo * pa - hi * pb) / z
            cc = m + mu
            mom[0] = 1.0
            mom[1] = cc + sigma * ez
            mom[2] = cc * cc + 2.0 * cc * sigma * ez + sigma * sigma * ez2
            t = 0.0
            for j in range(nu):
                t += beta[j] * (xp[value_exp[j]] - gamma * mom[value_exp[j]])
            r[i] = c - t
    return out
