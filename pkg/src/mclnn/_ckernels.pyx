# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: conditional-layer forward/backward, matmul, radix-2 FFT.

Plain loops with a fixed summation order; no BLAS. The conditional-layer
kernels visit only the cells listed in ``runs`` (per hidden node, the
maximal runs of ones of its mask column), so masked layers cost in
proportion to the mask density. Signatures mirror ``_pykernels``.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef extern from "_simd.h" nogil:
    double _dot "mclnn_dot"(const double* a, const double* b, Py_ssize_t n)
    void _axpy "mclnn_axpy"(double alpha, const double* x, double* y, Py_ssize_t n)
    void _dot4 "mclnn_dot4"(const double* x, Py_ssize_t ldx, const double* w, Py_ssize_t n, double* out)


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t r = a.shape[0], c = a.shape[1], k = b.shape[1]
    cdef Py_ssize_t i, p
    out = np.zeros((r, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    if r == 0 or c == 0 or k == 0:
        return out
    with nogil:
        for i in range(r):
            for p in range(c):
                _axpy(a[i, p], &b[p, 0], &o[i, 0], k)
    return out


def clnn_forward(const double[:, :, ::1] x, z, runs):
    """x (B, q, l), z (d, l, e) -> pre-activation (B, q - d + 1, e), bias excluded."""
    cdef const double[:, :, ::1] zt = np.ascontiguousarray(np.transpose(z, (0, 2, 1)), dtype=np.float64)
    cdef const cnp.int64_t[::1] ptr = runs[0]
    cdef const cnp.int64_t[::1] rstart = runs[1]
    cdef const cnp.int64_t[::1] rlen = runs[2]
    cdef Py_ssize_t d = zt.shape[0], e = zt.shape[1]
    cdef Py_ssize_t B = x.shape[0], q = x.shape[1]
    cdef Py_ssize_t T = q - d + 1
    cdef Py_ssize_t l = x.shape[2]
    cdef Py_ssize_t b, t, u, j, r, s, k
    cdef double acc
    cdef double part[4]
    cdef double acc4[4]
    out = np.zeros((B, T, e), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    if B == 0 or T <= 0 or e == 0:
        return out
    with nogil:
        for b in range(B):
            for u in range(d):
                for j in range(e):
                    t = 0
                    while t + 4 <= T:
                        acc4[0] = 0.0
                        acc4[1] = 0.0
                        acc4[2] = 0.0
                        acc4[3] = 0.0
                        for r in range(ptr[j], ptr[j + 1]):
                            s = rstart[r]
                            _dot4(&x[b, t + u, s], l, &zt[u, j, s], rlen[r], part)
                            for k in range(4):
                                acc4[k] += part[k]
                        for k in range(4):
                            o[b, t + k, j] += acc4[k]
                        t += 4
                    while t < T:
                        acc = 0.0
                        for r in range(ptr[j], ptr[j + 1]):
                            s = rstart[r]
                            acc += _dot(&x[b, t + u, s], &zt[u, j, s], rlen[r])
                        o[b, t, j] += acc
                        t += 1
    return out


def clnn_backward(const double[:, :, ::1] x, z, const double[:, :, ::1] delta, runs):
    """Returns (grad_z (d, l, e), grad_x (B, q, l)); cells outside ``runs`` stay 0."""
    cdef const double[:, :, ::1] zt = np.ascontiguousarray(np.transpose(z, (0, 2, 1)), dtype=np.float64)
    cdef const cnp.int64_t[::1] ptr = runs[0]
    cdef const cnp.int64_t[::1] rstart = runs[1]
    cdef const cnp.int64_t[::1] rlen = runs[2]
    cdef Py_ssize_t d = zt.shape[0], e = zt.shape[1], l = zt.shape[2]
    cdef Py_ssize_t B = x.shape[0], q = x.shape[1]
    cdef Py_ssize_t T = q - d + 1
    cdef Py_ssize_t b, t, u, j, r, s, n
    cdef double dv
    gzt_arr = np.zeros((d, e, l), dtype=np.float64)
    gx_arr = np.zeros((B, q, l), dtype=np.float64)
    cdef double[:, :, ::1] gzt = gzt_arr
    cdef double[:, :, ::1] gx = gx_arr
    if B > 0 and T > 0 and e > 0 and l > 0:
        with nogil:
            for b in range(B):
                for u in range(d):
                    for j in range(e):
                        for t in range(T):
                            dv = delta[b, t, j]
                            for r in range(ptr[j], ptr[j + 1]):
                                s = rstart[r]
                                n = rlen[r]
                                _axpy(dv, &x[b, t + u, s], &gzt[u, j, s], n)
                                _axpy(dv, &zt[u, j, s], &gx[b, t + u, s], n)
    return np.ascontiguousarray(gzt_arr.transpose(0, 2, 1)), gx_arr


def fft_rows(double complex[:, ::1] data, const double complex[::1] twiddles):
    cdef Py_ssize_t m = data.shape[0], n = data.shape[1]
    cdef Py_ssize_t r, i, j, bit, half, stride, start, k
    cdef double complex tmp, top, bot, w
    with nogil:
        for r in range(m):
            j = 0
            for i in range(1, n):
                bit = n >> 1
                while j & bit:
                    j ^= bit
                    bit >>= 1
                j |= bit
                if i < j:
                    tmp = data[r, i]
                    data[r, i] = data[r, j]
                    data[r, j] = tmp
            half = 1
            while half < n:
                stride = n // (2 * half)
                start = 0
                while start < n:
                    for k in range(half):
                        w = twiddles[k * stride]
                        top = data[r, start + k]
                        bot = data[r, start + k + half] * w
                        data[r, start + k] = top + bot
                        data[r, start + k + half] = top - bot
                    start += 2 * half
                half *= 2
