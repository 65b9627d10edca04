"""Pure-Python/numpy sum-tree kernels, used when the compiled core is missing.

Same node layout and signatures as the Cython module.  Batch operations are
vectorised one tree level at a time so the fallback stays usable.
"""

import numpy as np


def tree_set(nodes, offset, index, value):
    node = offset + index
    nodes[node] = value
    touched = 1
    while node > 0:
        node = (node - 1) >> 1
        nodes[node] = nodes[2 * node + 1] + nodes[2 * node + 2]
        touched += 1
    return touched


def tree_set_many(nodes, offset, indices, values):
    node = np.asarray(indices, dtype=np.int64) + offset
    nodes[node] = values
    while node.size and node[0] > 0:
        node = np.unique((node - 1) >> 1)
        nodes[node] = nodes[2 * node + 1] + nodes[2 * node + 2]


def tree_find(nodes, offset, values):
    v = np.array(values, dtype=np.float64)
    node = np.zeros(v.shape[0], dtype=np.int64)
    while offset and node[0] < offset:
        left = 2 * node + 1
        lsum = nodes[left]
        go_left = (lsum > v) | ((nodes[left + 1] <= 0.0) & (lsum > 0.0))
        v = np.where(go_left, v, v - lsum)
        node = np.where(go_left, left, left + 1)
    return node - offset


def tree_stratified(nodes, offset, u):
    """One leaf per stratum ``[k, k+1) * total / n`` at relative position ``u[k]``."""
    total = nodes[0]
    values = (np.arange(u.shape[0]) + u) * (total / u.shape[0])
    np.minimum(values, np.nextafter(total, 0.0), out=values)
    return tree_find(nodes, offset, values)


def tree_rebuild(nodes, offset, count):
    """Recompute every ancestor of leaves ``[0, count)``, level by level."""
    lo, n = offset, count
    while lo > 0 and n > 0:
        lo = (lo - 1) >> 1
        n = (n + 1) >> 1
        parents = np.arange(lo, lo + n)
        nodes[lo:lo + n] = nodes[2 * parents + 1] + nodes[2 * parents + 2]


def inverse_leaves(src, src_offset, dst, dst_offset, count):
    """Write ``max(p) / p_i`` into the first ``count`` destination leaves.

    Leaves past ``count`` are left alone; callers keep them at zero.
    """
    p = src[src_offset:src_offset + count]
    pmax = float(p.max()) if count else 0.0
    dst[dst_offset:dst_offset + count] = pmax / p
    return pmax
