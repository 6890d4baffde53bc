# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner loops for tree training and traversal."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def bucket_sums(const cnp.int32_t[:] bins, const double[:] g, const double[:] h,
                const cnp.int64_t[:] rows, Py_ssize_t n_buckets):
    cdef cnp.ndarray[double, ndim=1] gs = np.zeros(n_buckets)
    cdef cnp.ndarray[double, ndim=1] hs = np.zeros(n_buckets)
    cdef double[:] gv = gs
    cdef double[:] hv = hs
    cdef Py_ssize_t i, r, b
    for i in range(rows.shape[0]):
        r = rows[i]
        b = bins[r]
        gv[b] += g[r]
        hv[b] += h[r]
    return gs, hs


def best_split(const double[:] gs, const double[:] hs, double lam, double min_child):
    """Best cut ``bins <= b`` over bucket sums; returns (b, gain) or (-1, 0)."""
    cdef Py_ssize_t n = gs.shape[0], b, best = -1
    cdef double gt = 0.0, ht = 0.0, gl = 0.0, hl = 0.0, gr, hr, gain, top = 0.0
    for b in range(n):
        gt += gs[b]
        ht += hs[b]
    cdef double parent = gt * gt / (ht + lam)
    for b in range(n - 1):
        gl += gs[b]
        hl += hs[b]
        gr = gt - gl
        hr = ht - hl
        if hl < min_child or hr < min_child:
            continue
        gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
        if gain > top:
            top = gain
            best = b
    return best, top


def leaf_ids(const double[:, :] x, const cnp.int32_t[:] feature, const double[:] threshold,
             const cnp.int32_t[:] left, const cnp.int32_t[:] right):
    cdef Py_ssize_t q, i
    cdef cnp.int32_t node
    cdef cnp.ndarray[cnp.int32_t, ndim=1] out = np.empty(x.shape[0], dtype=np.int32)
    cdef cnp.int32_t[:] ov = out
    for q in range(x.shape[0]):
        node = 0
        while feature[node] >= 0:
            if x[q, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        ov[q] = node
    return out
