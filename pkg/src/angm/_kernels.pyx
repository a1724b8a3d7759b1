# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled link-statistics kernels over a CSR adjacency."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def neighbor_mass(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                  const double[:, ::1] tau):
    """out[i, l] = sum over neighbours j of i of tau[j, l]."""
    cdef Py_ssize_t n = tau.shape[0], K = tau.shape[1]
    cdef Py_ssize_t i, p, l, j
    out_arr = np.zeros((n, K), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                for l in range(K):
                    out[i, l] += tau[j, l]
    return out_arr


def block_edge_counts(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                      const cnp.int64_t[::1] labels, Py_ssize_t K):
    """Ordered-pair edge counts between label groups."""
    cdef Py_ssize_t n = labels.shape[0]
    cdef Py_ssize_t i, p
    out_arr = np.zeros((K, K), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for p in range(indptr[i], indptr[i + 1]):
                out[labels[i], labels[indices[p]]] += 1
    return out_arr
