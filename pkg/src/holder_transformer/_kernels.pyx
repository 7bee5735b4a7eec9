# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for residual ReLU stacks and single-head attention."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange, parallel
from libc.stdlib cimport malloc, free
from libc.math cimport exp

cnp.import_array()

BACKEND = "cython"


cdef enum:
    BLOCK = 64


def ff_stack_columns(double[:, ::1] cols, long[::1] widths, double[::1] w1,
                     double[::1] b1, double[::1] w2, double[::1] b2):
    # Columns are processed in blocks of BLOCK so the innermost loops run
    # over contiguous columns and vectorize; per-entry arithmetic order is
    # the same as one column at a time.
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t d = cols.shape[1]
    cdef Py_ssize_t nl = widths.shape[0]
    cdef Py_ssize_t nb = (n + BLOCK - 1) // BLOCK
    cdef Py_ssize_t blk, i, i0, m, k, a, j, l, ow, ob, maxw = 1
    cdef double wv, bv
    cdef double *h
    cdef double *x
    cdef double *acc
    for k in range(nl):
        if widths[k] > maxw:
            maxw = widths[k]
    with nogil, parallel():
        h = <double *> malloc(maxw * BLOCK * sizeof(double))
        x = <double *> malloc(d * BLOCK * sizeof(double))
        acc = <double *> malloc(BLOCK * sizeof(double))
        for blk in prange(nb, schedule="static"):
            i0 = blk * BLOCK
            m = n - i0
            if m > BLOCK:
                m = BLOCK
            for j in range(d):
                for i in range(m):
                    x[j * BLOCK + i] = cols[i0 + i, j]
            ow = 0
            ob = 0
            for k in range(nl):
                l = widths[k]
                for a in range(l):
                    bv = b1[ob + a]
                    for i in range(m):
                        acc[i] = bv
                    for j in range(d):
                        wv = w1[ow + a * d + j]
                        for i in range(m):
                            acc[i] = acc[i] + wv * x[j * BLOCK + i]
                    for i in range(m):
                        h[a * BLOCK + i] = acc[i] if acc[i] > 0.0 else 0.0
                for j in range(d):
                    for i in range(m):
                        acc[i] = 0.0
                    for a in range(l):
                        wv = w2[ow + j * l + a]
                        for i in range(m):
                            acc[i] = acc[i] + wv * h[a * BLOCK + i]
                    bv = b2[k * d + j]
                    for i in range(m):
                        x[j * BLOCK + i] = x[j * BLOCK + i] + acc[i] + bv
                ow = ow + l * d
                ob = ob + l
            for j in range(d):
                for i in range(m):
                    cols[i0 + i, j] = x[j * BLOCK + i]
        free(h)
        free(x)
        free(acc)
    return np.asarray(cols)


def attention_batch(X, W_K, W_Q, W_V, W_O):
    cdef double[:, :, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] wk = np.ascontiguousarray(W_K, dtype=np.float64)
    cdef double[:, ::1] wq = np.ascontiguousarray(W_Q, dtype=np.float64)
    cdef double[:, ::1] wv = np.ascontiguousarray(W_V, dtype=np.float64)
    cdef double[:, ::1] wo = np.ascontiguousarray(W_O, dtype=np.float64)
    cdef Py_ssize_t N = x.shape[0], d = x.shape[1], L = x.shape[2], m = wk.shape[0]
    out_arr = np.empty((N, d, L), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t s, a, b, c, q
    cdef double *K
    cdef double *Q
    cdef double *V
    cdef double *P
    cdef double acc, mx, tot
    with nogil, parallel():
        K = <double *> malloc(m * L * sizeof(double))
        Q = <double *> malloc(m * L * sizeof(double))
        V = <double *> malloc(m * L * sizeof(double))
        P = <double *> malloc(L * L * sizeof(double))
        for s in prange(N, schedule="static"):
            for a in range(m):
                for c in range(L):
                    K[a * L + c] = 0.0
                    Q[a * L + c] = 0.0
                    V[a * L + c] = 0.0
                    for b in range(d):
                        K[a * L + c] = K[a * L + c] + wk[a, b] * x[s, b, c]
                        Q[a * L + c] = Q[a * L + c] + wq[a, b] * x[s, b, c]
                        V[a * L + c] = V[a * L + c] + wv[a, b] * x[s, b, c]
            # P[key, query] = softmax over keys of K[:, key] . Q[:, query]
            for q in range(L):
                mx = -1e308
                for c in range(L):
                    acc = 0.0
                    for a in range(m):
                        acc = acc + K[a * L + c] * Q[a * L + q]
                    P[c * L + q] = acc
                    if acc > mx:
                        mx = acc
                tot = 0.0
                for c in range(L):
                    P[c * L + q] = exp(P[c * L + q] - mx)
                    tot = tot + P[c * L + q]
                for c in range(L):
                    P[c * L + q] = P[c * L + q] / tot
            for b in range(d):
                for q in range(L):
                    acc = 0.0
                    for a in range(m):
                        mx = 0.0
                        for c in range(L):
                            mx = mx + V[a * L + c] * P[c * L + q]
                        acc = acc + wo[b, a] * mx
                    out[s, b, q] = x[s, b, q] + acc
        free(K)
        free(Q)
        free(V)
        free(P)
    return out_arr
