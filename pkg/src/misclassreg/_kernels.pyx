# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-observation likelihood kernels.

Single passes over the rows without temporaries. Each row evaluates only the
terms its query status needs, and the two logistic log-probabilities share
one ``log1p(exp(-|t|))``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log1p, fabs, isfinite, INFINITY, NAN

cnp.import_array()

STATUS_OK = 0
STATUS_STRUCTURAL = 1
STATUS_OVERFLOW = 2

cdef double LP_MAX = 700.0


cdef inline double _log_sigmoid(double t) nogil:
    cdef double a = log1p(exp(-fabs(t)))
    if t >= 0:
        return -a
    return t - a


def joint_terms(const double[::1] y, const double[::1] lgy, const double[::1] logoff,
                const double[::1] lin0, const double[::1] lin1, const double[::1] logit,
                const double[::1] xstar, bint one_sided):
    cdef Py_ssize_t n = y.shape[0], i
    cdef double e0, e1
    a0_arr = np.empty(n)
    a1_arr = np.empty(n)
    cdef double[::1] a0 = a0_arr
    cdef double[::1] a1 = a1_arr
    for i in range(n):
        e0 = logoff[i] + lin0[i]
        e1 = logoff[i] + lin1[i]
        if not (isfinite(e0) and isfinite(e1) and e0 <= LP_MAX and e1 <= LP_MAX):
            return None, None, STATUS_OVERFLOW, i
        a0[i] = y[i] * e0 - exp(e0) - lgy[i]
        a1[i] = y[i] * e1 - exp(e1) - lgy[i]
        if one_sided and xstar[i] == 0.0:
            a1[i] = -INFINITY
        else:
            a0[i] += _log_sigmoid(-logit[i])
            a1[i] += _log_sigmoid(logit[i])
    return a0_arr, a1_arr, STATUS_OK, -1


def loglik_and_phi(const double[::1] y, const double[::1] lgy, const double[::1] logoff,
                   const double[::1] lin0, const double[::1] lin1, const double[::1] logit,
                   const double[::1] xstar, const double[::1] x, const cnp.npy_bool[::1] queried,
                   bint one_sided, bint want_phi):
    cdef Py_ssize_t n = y.shape[0], i
    cdef double e0, e1, t, a, ls0, ls1, a0, a1, d, total = 0.0
    cdef bint zero, q, need0, need1
    cdef double[::1] phi
    phi_arr = None
    if want_phi:
        phi_arr = np.empty(n)
        phi = phi_arr
    for i in range(n):
        e0 = logoff[i] + lin0[i]
        e1 = logoff[i] + lin1[i]
        if not (isfinite(e0) and isfinite(e1) and e0 <= LP_MAX and e1 <= LP_MAX):
            return NAN, None, STATUS_OVERFLOW, i
        zero = one_sided and xstar[i] == 0.0
        q = queried[i]
        # only evaluate the exposure values that contribute to this row
        need1 = not zero and (not q or x[i] == 1.0)
        need0 = not q or x[i] != 1.0
        if q and x[i] == 1.0 and zero:
            return NAN, None, STATUS_STRUCTURAL, i
        if zero:
            a0 = y[i] * e0 - exp(e0) - lgy[i]
            total += a0
            if want_phi:
                phi[i] = 0.0
            continue
        t = logit[i]
        a = log1p(exp(-fabs(t)))
        ls1 = -a if t >= 0 else t - a
        ls0 = ls1 - t
        a0 = y[i] * e0 - exp(e0) - lgy[i] + ls0 if need0 else -INFINITY
        a1 = y[i] * e1 - exp(e1) - lgy[i] + ls1 if need1 else -INFINITY
        if q:
            total += a1 if x[i] == 1.0 else a0
            if want_phi:
                phi[i] = 1.0 if x[i] == 1.0 else 0.0
            continue
        if a0 >= a1:
            d = exp(a1 - a0)
            total += a0 + log1p(d)
            if want_phi:
                phi[i] = d / (1.0 + d)
        else:
            d = exp(a0 - a1)
            total += a1 + log1p(d)
            if want_phi:
                phi[i] = 1.0 / (1.0 + d)
    return total, phi_arr, STATUS_OK, -1


cdef enum:
    C_X0 = 0
    C_X1 = 1
    C_MIX = 2
    C_ZERO = 3

ROW_X0 = C_X0
ROW_X1 = C_X1
ROW_MIX = C_MIX
ROW_ZERO = C_ZERO


def increment_sum(const double[::1] y, const double[::1] s0, const double[::1] s1, const double[::1] dt,
                  const double[::1] mu0, const double[::1] mu1, const double[::1] t_ref,
                  const double[::1] lp0_ref, const double[::1] lp1_ref, const double[::1] logw0,
                  const double[::1] logw1, const signed char[::1] code):
    """Sum of per-row log-likelihood changes relative to a reference point.

    Same contract as the NumPy version; rows only evaluate the terms their
    ``code`` needs.
    """
    cdef Py_ssize_t n = y.shape[0], i
    cdef double t, a, ls0, ls1, d0, d1, v0, v1, total = 0.0
    cdef signed char c
    with nogil:
        for i in range(n):
            c = code[i]
            if c == C_ZERO:
                total += y[i] * s0[i] - mu0[i] * expm1(s0[i])
                continue
            t = t_ref[i] + dt[i]
            a = log1p(exp(-fabs(t)))
            ls1 = -a if t >= 0 else t - a
            ls0 = ls1 - t
            if c == C_X0:
                total += y[i] * s0[i] - mu0[i] * expm1(s0[i]) + ls0 - lp0_ref[i]
            elif c == C_X1:
                total += y[i] * s1[i] - mu1[i] * expm1(s1[i]) + ls1 - lp1_ref[i]
            else:
                d0 = y[i] * s0[i] - mu0[i] * expm1(s0[i]) + ls0 - lp0_ref[i]
                d1 = y[i] * s1[i] - mu1[i] * expm1(s1[i]) + ls1 - lp1_ref[i]
                v0 = logw0[i] + d0
                v1 = logw1[i] + d1
                if v0 >= v1:
                    total += v0 + log1p(exp(v1 - v0))
                else:
                    total += v1 + log1p(exp(v0 - v1))
    return total
