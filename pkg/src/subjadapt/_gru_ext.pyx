# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU sequence kernels.

Same contract and array layouts as ``_gru_ref``. Recurrent products call BLAS
``dgemm`` directly, accumulating into the precomputed input projection, and
the gate nonlinearities run over flat contiguous ``B*H`` blocks so the
compiler can vectorize them.
"""

import numpy as np

from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm

from ._gru_ref import input_projection, weight_grads


cdef inline void _mm_nt(int rows, int n, int k, const double* A, int lda,
                        const double* M, int ldm, double* C, int ldc, double beta) noexcept nogil:
    # row-major C[rows, n] = A[rows, k] @ M[n, k]^T + beta * C
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef double one = 1.0
    dgemm(&ta, &tb, &n, &rows, &k, &one, <double*>M, &ldm, <double*>A, &lda, &beta, C, &ldc)


cdef inline void _mm_nn(int rows, int n, int k, const double* A, int lda,
                        const double* M, int ldm, double* C, int ldc, double beta) noexcept nogil:
    # row-major C[rows, n] = A[rows, k] @ M[k, n] + beta * C
    cdef char ta = b'N'
    cdef char tb = b'N'
    cdef double one = 1.0
    dgemm(&ta, &tb, &n, &rows, &k, &one, <double*>M, &ldm, <double*>A, &lda, &beta, C, &ldc)


cdef void _sigmoid(const double* src, double* dst, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k
    for k in range(n):
        dst[k] = 1.0 / (1.0 + exp(-src[k]))


cdef void _tanh(const double* src, double* dst, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k
    for k in range(n):
        dst[k] = tanh(src[k])


def gru_forward(X, W, U, b):
    X = np.ascontiguousarray(X, dtype=np.float64)
    cdef int T = X.shape[0], B = X.shape[1]
    cdef int H = U.shape[1]
    cdef Py_ssize_t n = <Py_ssize_t>B * H
    U_arr = np.ascontiguousarray(U, dtype=np.float64)
    xp_arr = input_projection(X, W, b)
    Hs_arr = np.zeros((T + 1, B, H))
    R_arr = np.empty((T, B, H))
    Z_arr = np.empty((T, B, H))
    C_arr = np.empty((T, B, H))
    if T == 0 or n == 0:
        return Hs_arr, R_arr, Z_arr, C_arr
    rh_arr = np.empty(n)

    cdef double[:, ::1] Um = U_arr
    cdef double[:, :, :, ::1] XP = xp_arr
    cdef double[:, :, ::1] Hs = Hs_arr
    cdef double[:, :, ::1] R = R_arr
    cdef double[:, :, ::1] Z = Z_arr
    cdef double[:, :, ::1] C = C_arr
    cdef double[::1] rh = rh_arr
    cdef const double* U_r = &Um[0, 0]
    cdef const double* U_u = &Um[H, 0]
    cdef const double* U_c = &Um[2 * H, 0]
    cdef double *h
    cdef double *hn
    cdef double *r
    cdef double *u
    cdef double *c
    cdef int t
    cdef Py_ssize_t k

    with nogil:
        for t in range(T):
            h = &Hs[t, 0, 0]
            hn = &Hs[t + 1, 0, 0]
            r = &R[t, 0, 0]
            u = &Z[t, 0, 0]
            c = &C[t, 0, 0]
            _mm_nt(B, H, H, h, H, U_r, H, &XP[t, 0, 0, 0], H, 1.0)
            _mm_nt(B, H, H, h, H, U_u, H, &XP[t, 1, 0, 0], H, 1.0)
            _sigmoid(&XP[t, 0, 0, 0], r, n)
            _sigmoid(&XP[t, 1, 0, 0], u, n)
            for k in range(n):
                rh[k] = r[k] * h[k]
            _mm_nt(B, H, H, &rh[0], H, U_c, H, &XP[t, 2, 0, 0], H, 1.0)
            _tanh(&XP[t, 2, 0, 0], c, n)
            for k in range(n):
                hn[k] = (1.0 - u[k]) * h[k] + u[k] * c[k]
    return Hs_arr, R_arr, Z_arr, C_arr


def gru_backward(gH, X, W, U, Hs_in, R_in, Z_in, C_in, need_dx=False):
    X = np.ascontiguousarray(X, dtype=np.float64)
    cdef int T = X.shape[0], B = X.shape[1]
    cdef int H = U.shape[1]
    cdef Py_ssize_t n = <Py_ssize_t>B * H
    U_arr = np.ascontiguousarray(U, dtype=np.float64)
    Hs_arr = np.ascontiguousarray(Hs_in, dtype=np.float64)
    R_arr = np.ascontiguousarray(R_in, dtype=np.float64)
    dA_arr = np.empty((T, 3, B, H))
    if T > 0 and n > 0:
        dh_arr = np.array(gH, dtype=np.float64, order="C").reshape(-1)
        _backward_loop(T, B, H, U_arr, Hs_arr, R_arr,
                       np.ascontiguousarray(Z_in, dtype=np.float64),
                       np.ascontiguousarray(C_in, dtype=np.float64),
                       dA_arr, dh_arr)
    return weight_grads(dA_arr, X, W, Hs_arr, R_arr, need_dx)


cdef void _backward_loop(int T, int B, int H, double[:, ::1] Um,
                         const double[:, :, ::1] Hs, const double[:, :, ::1] R,
                         const double[:, :, ::1] Z, const double[:, :, ::1] C,
                         double[:, :, :, ::1] dA, double[::1] dh0):
    cdef Py_ssize_t n = <Py_ssize_t>B * H
    dn_arr = np.empty(n)
    drh_arr = np.empty(n)
    cdef double[::1] dn = dn_arr
    cdef double[::1] drh_v = drh_arr
    cdef double* dh = &dh0[0]
    cdef double* nxt = &dn[0]
    cdef double* drh = &drh_v[0]
    cdef double* swap
    cdef const double* U_r = &Um[0, 0]
    cdef const double* U_u = &Um[H, 0]
    cdef const double* U_c = &Um[2 * H, 0]
    cdef const double *h
    cdef const double *r
    cdef const double *u
    cdef const double *c
    cdef double *dar
    cdef double *dau
    cdef double *dac
    cdef double g
    cdef int t
    cdef Py_ssize_t k

    with nogil:
        for t in range(T - 1, -1, -1):
            h = &Hs[t, 0, 0]
            r = &R[t, 0, 0]
            u = &Z[t, 0, 0]
            c = &C[t, 0, 0]
            dar = &dA[t, 0, 0, 0]
            dau = &dA[t, 1, 0, 0]
            dac = &dA[t, 2, 0, 0]
            for k in range(n):
                g = dh[k]
                dac[k] = g * u[k] * (1.0 - c[k] * c[k])
                dau[k] = g * (c[k] - h[k]) * u[k] * (1.0 - u[k])
            _mm_nn(B, H, H, dac, H, U_c, H, drh, H, 0.0)
            for k in range(n):
                dar[k] = drh[k] * h[k] * r[k] * (1.0 - r[k])
                nxt[k] = dh[k] * (1.0 - u[k]) + drh[k] * r[k]
            _mm_nn(B, H, H, dar, H, U_r, H, nxt, H, 1.0)
            _mm_nn(B, H, H, dau, H, U_u, H, nxt, H, 1.0)
            swap = dh
            dh = nxt
            nxt = swap
