# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col(floating[:, :, :, ::1] xp, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t ho = (hp - k) // stride + 1, wo = (wp - k) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n * ho * wo, c * k * k), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t b, y, x, ch, i, j, row, col
    with nogil:
        for b in range(n):
            for y in range(ho):
                for x in range(wo):
                    row = (b * ho + y) * wo + x
                    col = 0
                    for ch in range(c):
                        for i in range(k):
                            for j in range(k):
                                out[row, col] = xp[b, ch, y * stride + i, x * stride + j]
                                col += 1
    return out_arr


def col2im(cols, Py_ssize_t n, Py_ssize_t c, Py_ssize_t hp, Py_ssize_t wp,
           Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t ho = (hp - k) // stride + 1, wo = (wp - k) // stride + 1
    cols = np.ascontiguousarray(cols).reshape(n * ho * wo, c * k * k)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, out, k, stride, ho, wo)
    else:
        _col2im[double](cols, out, k, stride, ho, wo)
    return out


cdef void _col2im(floating[:, ::1] cols, floating[:, :, :, ::1] out,
                  Py_ssize_t k, Py_ssize_t stride, Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1]
    cdef Py_ssize_t b, y, x, ch, i, j, row, col
    for b in range(n):
        for y in range(ho):
            for x in range(wo):
                row = (b * ho + y) * wo + x
                col = 0
                for ch in range(c):
                    for i in range(k):
                        for j in range(k):
                            out[b, ch, y * stride + i, x * stride + j] += cols[row, col]
                            col += 1


def grouped_auc(counts, group, labels, Py_ssize_t n_groups):
    cdef cnp.int64_t[:, ::1] cnt = np.ascontiguousarray(counts, dtype=np.int64)
    cdef cnp.int64_t[::1] grp = np.ascontiguousarray(group, dtype=np.int64)
    cdef cnp.int8_t[::1] lab = np.ascontiguousarray(labels, dtype=np.int8)
    cdef Py_ssize_t nb = cnt.shape[0], n = cnt.shape[1]
    out_arr = np.empty(nb, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] p = np.zeros(n_groups)
    cdef double[::1] q = np.zeros(n_groups)
    cdef Py_ssize_t b, i, g
    cdef double below, num, tp, tq
    with nogil:
        for b in range(nb):
            for g in range(n_groups):
                p[g] = 0.0
                q[g] = 0.0
            for i in range(n):
                if lab[i]:
                    p[grp[i]] += cnt[b, i]
                else:
                    q[grp[i]] += cnt[b, i]
            below = 0.0
            num = 0.0
            tp = 0.0
            for g in range(n_groups):
                num += p[g] * (below + 0.5 * q[g])
                below += q[g]
                tp += p[g]
            tq = below
            out[b] = num / (tp * tq)
    return out_arr
