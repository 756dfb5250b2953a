# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled exponential-Euler stepping and path-sup cost assembly.

Same contracts as the functions in ``_fallback.py``.
"""
import numpy as np
from libc.math cimport isfinite


def advance(double[:, ::1] x, const double[::1] decay, const double[::1] phi,
            const double[:, ::1] wf, const double[:, :, ::1] bmat, const double[:, ::1] bvec,
            const double[:, ::1] wg, const double[:, :, ::1] gconst, const double[:, :, :, ::1] glin,
            const double[:, :, ::1] dw, const long long[::1] rec_slot, double[:, :, ::1] out):
    cdef Py_ssize_t n_paths = x.shape[0], d = x.shape[1], m = gconst.shape[2]
    cdef Py_ssize_t n_steps = wf.shape[0], jf = wf.shape[1], jg = wg.shape[1]
    cdef bint has_lin = glin.shape[0] > 0 and np.any(np.asarray(glin))
    cdef double[:, ::1] B = np.empty((d, d))
    cdef double[::1] bv = np.empty(d)
    cdef double[:, ::1] C = np.empty((d, m))
    cdef double[:, :, ::1] L = np.empty((d if has_lin else 0, m, d))
    cdef double[::1] xn = np.empty(d)
    cdef double[::1] g = np.empty(d)
    cdef Py_ssize_t k, i, r, c, j, l, bidx, slot
    cdef double w, acc, gij
    cdef Py_ssize_t bad_step = -1, bad_path = -1

    with nogil:
        for k in range(n_steps):
            # effective coefficients at this step, shared by every path
            for r in range(d):
                bv[r] = 0.0
                for c in range(d):
                    B[r, c] = 0.0
                for j in range(m):
                    C[r, j] = 0.0
                    if has_lin:
                        for l in range(d):
                            L[r, j, l] = 0.0
            for bidx in range(jf):
                w = wf[k, bidx]
                if w == 0.0:
                    continue
                for r in range(d):
                    bv[r] += w * bvec[bidx, r]
                    for c in range(d):
                        B[r, c] += w * bmat[bidx, r, c]
            for bidx in range(jg):
                w = wg[k, bidx]
                if w == 0.0:
                    continue
                for r in range(d):
                    for j in range(m):
                        C[r, j] += w * gconst[bidx, r, j]
                        if has_lin:
                            for l in range(d):
                                L[r, j, l] += w * glin[bidx, r, j, l]
            slot = rec_slot[k]
            for i in range(n_paths):
                for r in range(d):
                    acc = bv[r]
                    for c in range(d):
                        acc = acc + B[r, c] * x[i, c]
                    g[r] = 0.0
                    for j in range(m):
                        gij = C[r, j]
                        if has_lin:
                            for l in range(d):
                                gij = gij + L[r, j, l] * x[i, l]
                        g[r] += gij * dw[i, k, j]
                    xn[r] = decay[r] * (x[i, r] + g[r]) + phi[r] * acc
                for r in range(d):
                    if not isfinite(xn[r]):
                        bad_step = k
                        bad_path = i
                    x[i, r] = xn[r]
                if bad_step >= 0:
                    break
                if slot >= 0:
                    for r in range(d):
                        out[i, slot, r] = xn[r]
            if bad_step >= 0:
                break
    return bad_step, bad_path


def sup_sq_cost(const double[:, :, ::1] a, const double[:, :, ::1] b):
    cdef Py_ssize_t n = a.shape[0], mm = b.shape[0], t = a.shape[1], d = a.shape[2]
    cost_arr = np.empty((n, mm))
    cdef double[:, ::1] cost = cost_arr
    cdef Py_ssize_t i, j, s, r
    cdef double best, acc, diff
    with nogil:
        for i in range(n):
            for j in range(mm):
                best = 0.0
                for s in range(t):
                    acc = 0.0
                    for r in range(d):
                        diff = a[i, s, r] - b[j, s, r]
                        acc = acc + diff * diff
                    if acc > best:
                        best = acc
                cost[i, j] = best
    return cost_arr
