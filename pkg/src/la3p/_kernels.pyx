# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sum-tree kernels.

Node layout: ``nodes`` has ``2 * padded - 1`` entries, node ``i`` has
children ``2i + 1`` and ``2i + 2``, leaf ``k`` lives at ``offset + k`` with
``offset = padded - 1``.  Signatures mirror :mod:`la3p._kernels_py`.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport nextafter

cnp.import_array()


cdef inline Py_ssize_t _set_one(double[::1] nodes, Py_ssize_t offset,
                                Py_ssize_t index, double value) nogil:
    cdef Py_ssize_t node = offset + index
    cdef Py_ssize_t touched = 1
    nodes[node] = value
    while node > 0:
        node = (node - 1) >> 1
        nodes[node] = nodes[2 * node + 1] + nodes[2 * node + 2]
        touched += 1
    return touched


def tree_set(double[::1] nodes, Py_ssize_t offset, Py_ssize_t index, double value):
    return _set_one(nodes, offset, index, value)


def tree_set_many(double[::1] nodes, Py_ssize_t offset,
                  const cnp.int64_t[::1] indices, const double[::1] values):
    cdef Py_ssize_t k, n = indices.shape[0]
    with nogil:
        for k in range(n):
            _set_one(nodes, offset, indices[k], values[k])


cdef inline Py_ssize_t _descend(const double[::1] nodes, Py_ssize_t offset, double v) noexcept nogil:
    cdef Py_ssize_t node = 0, left
    cdef double lsum
    while node < offset:
        left = 2 * node + 1
        lsum = nodes[left]
        # right subtree may be empty when rounding pushes v past it
        if lsum > v or (nodes[left + 1] <= 0.0 and lsum > 0.0):
            node = left
        else:
            v -= lsum
            node = left + 1
    return node - offset


def tree_find(const double[::1] nodes, Py_ssize_t offset, const double[::1] values):
    cdef Py_ssize_t k, n = values.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] out_v = out
    with nogil:
        for k in range(n):
            out_v[k] = _descend(nodes, offset, values[k])
    return out


def tree_stratified(const double[::1] nodes, Py_ssize_t offset, const double[::1] u):
    """One leaf per stratum ``[k, k+1) * total / n`` at relative position ``u[k]``."""
    cdef Py_ssize_t k, n = u.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] out_v = out
    cdef double total = nodes[0], width = nodes[0] / n
    cdef double top = nextafter(total, 0.0), v
    with nogil:
        for k in range(n):
            v = (k + u[k]) * width
            out_v[k] = _descend(nodes, offset, v if v < top else top)
    return out


def tree_rebuild(double[::1] nodes, Py_ssize_t offset, Py_ssize_t count):
    """Recompute every ancestor of leaves ``[0, count)``, level by level."""
    cdef Py_ssize_t lo = offset, n = count, p
    with nogil:
        while lo > 0 and n > 0:
            lo = (lo - 1) >> 1
            n = (n + 1) >> 1
            for p in range(lo, lo + n):
                nodes[p] = nodes[2 * p + 1] + nodes[2 * p + 2]


def inverse_leaves(const double[::1] src, Py_ssize_t src_offset,
                   double[::1] dst, Py_ssize_t dst_offset, Py_ssize_t count):
    """Write ``max(p) / p_i`` into the first ``count`` destination leaves.

    Leaves past ``count`` are left alone; callers keep them at zero.
    """
    cdef Py_ssize_t i
    cdef double pmax = 0.0, p
    with nogil:
        for i in range(count):
            p = src[src_offset + i]
            if p > pmax:
                pmax = p
        for i in range(count):
            dst[dst_offset + i] = pmax / src[src_offset + i]
    return pmax
