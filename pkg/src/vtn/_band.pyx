# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled band attention kernels.

Same contracts as ``vtn._band_py``: slot ``a`` of query row ``i`` reads key
``index[i, a]``, and ``-1`` marks an empty slot.
"""

import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def band_qk(real[:, :, ::1] q, real[:, :, ::1] k, const cnp.int64_t[:, ::1] index):
    cdef Py_ssize_t G = q.shape[0], n = q.shape[1], D = q.shape[2], A = index.shape[1]
    cdef Py_ssize_t g, i, a, d, j
    cdef real acc
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((G, n, A), dtype=dtype)
    cdef real[:, :, ::1] s = out
    with nogil:
        for g in range(G):
            for i in range(n):
                for a in range(A):
                    j = index[i, a]
                    if j < 0:
                        continue
                    acc = 0
                    for d in range(D):
                        acc = acc + q[g, i, d] * k[g, j, d]
                    s[g, i, a] = acc
    return out


def band_qk_backward(real[:, :, ::1] ds, real[:, :, ::1] q, real[:, :, ::1] k,
                     const cnp.int64_t[:, ::1] index):
    cdef Py_ssize_t G = q.shape[0], n = q.shape[1], D = q.shape[2], A = index.shape[1]
    cdef Py_ssize_t N = k.shape[1]
    cdef Py_ssize_t g, i, a, d, j
    cdef real w
    dtype = np.float32 if real is float else np.float64
    dq_arr = np.zeros((G, n, D), dtype=dtype)
    dk_arr = np.zeros((G, N, D), dtype=dtype)
    cdef real[:, :, ::1] dq = dq_arr
    cdef real[:, :, ::1] dk = dk_arr
    with nogil:
        for g in range(G):
            for i in range(n):
                for a in range(A):
                    j = index[i, a]
                    if j < 0:
                        continue
                    w = ds[g, i, a]
                    for d in range(D):
                        dq[g, i, d] = dq[g, i, d] + w * k[g, j, d]
                        dk[g, j, d] = dk[g, j, d] + w * q[g, i, d]
    return dq_arr, dk_arr


def band_pv(real[:, :, ::1] p, real[:, :, ::1] v, const cnp.int64_t[:, ::1] index):
    cdef Py_ssize_t G = p.shape[0], n = p.shape[1], A = p.shape[2], D = v.shape[2]
    cdef Py_ssize_t g, i, a, d, j
    cdef real w
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((G, n, D), dtype=dtype)
    cdef real[:, :, ::1] o = out
    with nogil:
        for g in range(G):
            for i in range(n):
                for a in range(A):
                    j = index[i, a]
                    if j < 0:
                        continue
                    w = p[g, i, a]
                    for d in range(D):
                        o[g, i, d] = o[g, i, d] + w * v[g, j, d]
    return out


def band_pv_backward(real[:, :, ::1] dout, real[:, :, ::1] p, real[:, :, ::1] v,
                     const cnp.int64_t[:, ::1] index):
    cdef Py_ssize_t G = p.shape[0], n = p.shape[1], A = p.shape[2], D = v.shape[2]
    cdef Py_ssize_t N = v.shape[1]
    cdef Py_ssize_t g, i, a, d, j
    cdef real acc, w
    dtype = np.float32 if real is float else np.float64
    dp_arr = np.zeros((G, n, A), dtype=dtype)
    dv_arr = np.zeros((G, N, D), dtype=dtype)
    cdef real[:, :, ::1] dp = dp_arr
    cdef real[:, :, ::1] dv = dv_arr
    with nogil:
        for g in range(G):
            for i in range(n):
                for a in range(A):
                    j = index[i, a]
                    if j < 0:
                        continue
                    w = p[g, i, a]
                    acc = 0
                    for d in range(D):
                        acc = acc + dout[g, i, d] * v[g, j, d]
                        dv[g, j, d] = dv[g, j, d] + w * dout[g, i, d]
                    dp[g, i, a] = acc
    return dp_arr, dv_arr
