# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU backpropagation through time.

The forward recurrence stays in numpy, whose SIMD tanh/exp beat scalar libm calls here.
Signature and return convention mirror ``graybox._pykernels.gru_backward``.
"""
import numpy as np
from scipy.linalg.cython_blas cimport dgemm


cdef inline void _mm(bint ta, bint tb, int m, int n, int k, double alpha, double* A, int lda,
                     double* B, int ldb, double beta, double* C, int ldc) noexcept nogil:
    # row-major C[m, n] = alpha op(A) op(B) + beta C, via the column-major transpose identity
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    dgemm(&cb, &ca, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


def gru_backward(double[:, :, ::1] g_hs, double[:, ::1] U, double[:, :, :, ::1] cache):
    cdef int M = g_hs.shape[0], B = g_hs.shape[1], H = U.shape[0]
    cdef int H3 = 3 * H
    da_arr = np.empty((M, B, H3))
    cdef double[:, :, ::1] da = da_arr
    cdef double[:, ::1] dh = np.zeros((B, H))
    cdef double[:, ::1] drh = np.empty((B, H))
    cdef int k, i, j
    cdef double d, h, z, r, n
    if M == 0 or B == 0:
        return da_arr
    with nogil:
        for k in range(M - 1, -1, -1):
            for i in range(B):
                for j in range(H):
                    d = dh[i, j] + g_hs[k, i, j]
                    dh[i, j] = d
                    h = cache[k, 0, i, j]
                    z = cache[k, 1, i, j]
                    n = cache[k, 3, i, j]
                    da[k, i, j] = d * (h - n) * z * (1.0 - z)
                    da[k, i, 2 * H + j] = d * (1.0 - z) * (1.0 - n * n)
            _mm(0, 1, B, H, H, 1.0, &da[k, 0, 2 * H], H3, &U[0, 2 * H], H3, 0.0, &drh[0, 0], H)
            for i in range(B):
                for j in range(H):
                    h = cache[k, 0, i, j]
                    z = cache[k, 1, i, j]
                    r = cache[k, 2, i, j]
                    da[k, i, H + j] = drh[i, j] * h * r * (1.0 - r)
                    dh[i, j] = dh[i, j] * z + drh[i, j] * r
            _mm(0, 1, B, H, 2 * H, 1.0, &da[k, 0, 0], H3, &U[0, 0], H3, 1.0, &dh[0, 0], H)
    return da_arr
