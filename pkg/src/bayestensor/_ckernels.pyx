# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled inner loops; see ``_pykernels`` for the layout conventions."""

import numpy as np

ctypedef long long i64


def entry_products(const double[:, ::1] cols, const i64[:, ::1] gidx,
                   const double[::1] w, Py_ssize_t skip):
    cdef Py_ssize_t nnz = gidx.shape[0], K = gidx.shape[1], d = cols.shape[1]
    cdef Py_ssize_t e, k, r
    cdef const double* row
    out_arr = np.empty((nnz, d))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for e in range(nnz):
            for r in range(d):
                out[e, r] = w[e]
            for k in range(K):
                if k == skip:
                    continue
                row = &cols[gidx[e, k], 0]
                for r in range(d):
                    out[e, r] *= row[r]
    return out_arr


def predict(const double[:, ::1] cols, const i64[:, ::1] gidx,
            const double[::1] w, const i64[::1] ptr):
    cdef Py_ssize_t n = ptr.shape[0] - 1, K = gidx.shape[1], d = cols.shape[1]
    cdef Py_ssize_t i, e, k, r
    cdef double acc, total, prod
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            total = 0.0
            for e in range(ptr[i], ptr[i + 1]):
                acc = 0.0
                for r in range(d):
                    prod = 1.0
                    for k in range(K):
                        prod = prod * cols[gidx[e, k], r]
                    acc = acc + prod
                total = total + w[e] * acc
            out[i] = total
    return out_arr


def mode_gram(const double[:, ::1] cols, const i64[:, ::1] gidx,
              const double[::1] w, const i64[::1] ptr, const double[::1] y,
              Py_ssize_t kk, i64 offset, Py_ssize_t M):
    cdef Py_ssize_t n = ptr.shape[0] - 1, K = gidx.shape[1], d = cols.shape[1]
    cdef Py_ssize_t i, e, k, r, s, j
    cdef double p, yi
    gram_arr = np.zeros((M, d, d))
    rhs_arr = np.zeros((M, d))
    b_arr = np.empty(d)
    cdef double[:, :, ::1] gram = gram_arr
    cdef double[:, ::1] rhs = rhs_arr
    cdef double[::1] b = b_arr
    with nogil:
        for i in range(n):
            if ptr[i + 1] == ptr[i]:
                continue
            for r in range(d):
                b[r] = 0.0
            for e in range(ptr[i], ptr[i + 1]):
                for r in range(d):
                    p = w[e]
                    for k in range(K):
                        if k != kk:
                            p = p * cols[gidx[e, k], r]
                    b[r] += p
            j = gidx[ptr[i], kk] - offset
            yi = y[i]
            for r in range(d):
                rhs[j, r] += yi * b[r]
                for s in range(r + 1):
                    gram[j, r, s] += b[r] * b[s]
        for j in range(M):
            for r in range(d):
                for s in range(r):
                    gram[j, s, r] = gram[j, r, s]
    return gram_arr, rhs_arr
