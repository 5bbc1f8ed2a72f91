# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled likelihood kernels (same contract as ``_kernels_py``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY

cnp.import_array()

cdef double CLAMP = 30.0


cdef inline double _clamped_exp(double z, bint *inside) noexcept nogil:
    if z >= CLAMP:
        inside[0] = False
        return exp(CLAMP)
    if z <= -CLAMP:
        inside[0] = False
        return exp(-CLAMP)
    inside[0] = True
    return exp(z)


def probabilities(double[:, ::1] beta, double[:, ::1] delta,
                  double[:, ::1] X1, double[:, ::1] Y1,
                  cnp.int64_t[::1] rows, double[:, ::1] W, double alpha):
    cdef Py_ssize_t n = rows.shape[0], nx = X1.shape[1], ny = Y1.shape[1]
    cdef Py_ssize_t last = W.shape[1] - 1
    out = np.empty((n, last + 1))
    cdef double[:, ::1] P = out
    cdef Py_ssize_t k, j, l, i
    cdef double z, lam, s, pj
    cdef bint inside
    with nogil:
        for k in range(n):
            i = rows[k]
            z = 0.0
            for l in range(nx):
                z += beta[i, l] * X1[k, l]
            lam = _clamped_exp(z, &inside)
            s = 0.0
            for j in range(last):
                z = 0.0
                for l in range(ny):
                    z += delta[j, l] * Y1[k, l]
                pj = lam / (alpha + lam + W[i, j] * _clamped_exp(z, &inside))
                P[k, j] = pj
                s += pj
            P[k, last] = 1.0 - s
    return out


def loglik_grad(double[:, ::1] beta, double[:, ::1] delta,
                double[:, ::1] X1, double[:, ::1] Y1,
                cnp.int64_t[::1] rows, cnp.int64_t[::1] cols,
                double[:, ::1] W, double alpha, bint with_grad=True,
                bint check_all=False):
    cdef Py_ssize_t n = rows.shape[0], nx = X1.shape[1], ny = Y1.shape[1]
    cdef Py_ssize_t last = W.shape[1] - 1
    cdef Py_ssize_t k, j, l, i, c
    cdef double z, lam, s, ll = 0.0, dA, r, Dj, pc, kg
    cdef bint a_in
    cdef Py_ssize_t bad = -1

    pbuf = np.empty(max(last, 1))
    qbuf = np.empty(max(last, 1))
    binbuf = np.empty(max(last, 1), dtype=np.uint8)
    cdef double[::1] p = pbuf
    cdef double[::1] q = qbuf
    cdef unsigned char[::1] b_in = binbuf
    cdef bint tmp

    gb = np.zeros((beta.shape[0], nx))
    gd = np.zeros((delta.shape[0], ny))
    cdef double[:, ::1] gbeta = gb
    cdef double[:, ::1] gdelta = gd

    with nogil:
        for k in range(n):
            i = rows[k]
            c = cols[k]
            z = 0.0
            for l in range(nx):
                z += beta[i, l] * X1[k, l]
            lam = _clamped_exp(z, &a_in)
            s = 0.0
            for j in range(last):
                z = 0.0
                for l in range(ny):
                    z += delta[j, l] * Y1[k, l]
                kg = W[i, j] * _clamped_exp(z, &tmp)
                b_in[j] = tmp
                Dj = alpha + lam + kg
                p[j] = lam / Dj
                q[j] = kg / Dj
                s += p[j]
            if (c == last or check_all) and 1.0 - s <= 0.0:
                bad = k
                break
            if c < last:
                pc = p[c]
                ll += log(pc)
            else:
                ll += log(1.0 - s)
            if not with_grad:
                continue
            if c < last:
                dA = 1.0 - p[c]
                if b_in[c]:
                    z = -q[c]
                    for l in range(ny):
                        gdelta[c, l] += z * Y1[k, l]
            else:
                r = 1.0 / (1.0 - s)
                dA = 0.0
                for j in range(last):
                    dA -= p[j] * (1.0 - p[j])
                    if b_in[j]:
                        z = p[j] * q[j] * r
                        for l in range(ny):
                            gdelta[j, l] += z * Y1[k, l]
                dA *= r
            if a_in:
                for l in range(nx):
                    gbeta[i, l] += dA * X1[k, l]
    if bad >= 0:
        return -INFINITY, bad, None, None
    if not with_grad:
        return ll, -1, None, None
    return ll, -1, gb, gd
