"""Array-backed sum-tree for proportional sampling.

The compiled kernels in ``_kernels`` are used when the extension was built;
otherwise the numpy fallback in ``_kernels_py`` is loaded.  Set the
environment variable ``LA3P_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import math
import os
from types import ModuleType

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("LA3P_PURE_PYTHON"):
        raise ImportError("compiled kernels disabled by LA3P_PURE_PYTHON")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS: dict[str, ModuleType] = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

DEFAULT_BACKEND = "cython" if _compiled is not None else "python"


class SumTree:
    """Binary tree whose internal nodes hold the sum of their children.

    ``capacity`` leaves are padded to the next power of two; padding leaves
    stay at zero and can never be returned by :meth:`find_prefix`.

    Ancestors are recomputed from their children on every write instead of
    being shifted by a delta, so the parent-sum invariant holds exactly
    no matter how many writes happen.
    """

    def __init__(self, capacity: int, backend: str | None = None) -> None:
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.padded = 1 << (self.capacity - 1).bit_length()
        self.offset = self.padded - 1
        self.nodes = np.zeros(2 * self.padded - 1, dtype=np.float64)
        self.size = 0
        self.backend = backend or DEFAULT_BACKEND
        self._k = BACKENDS[self.backend]
        self.last_write_nodes = 0

    def __len__(self) -> int:
        return self.capacity

    @property
    def leaves(self) -> np.ndarray:
        """View of the ``capacity`` real leaves."""
        return self.nodes[self.offset:self.offset + self.capacity]

    def total(self) -> float:
        return float(self.nodes[0])

    def set(self, index: int, priority: float) -> None:
        if not 0 <= index < self.capacity:
            raise IndexError(f"leaf index {index} out of range [0, {self.capacity})")
        priority = float(priority)
        if not math.isfinite(priority) or priority < 0.0:
            raise ValueError(f"priority must be finite and >= 0, got {priority}")
        self.last_write_nodes = self._k.tree_set(self.nodes, self.offset, int(index), priority)
        self.size = max(self.size, int(index) + 1)

    def set_many(self, indices, priorities) -> None:
        """Write several leaves; later duplicates win."""
        idx = np.ascontiguousarray(indices, dtype=np.int64)
        pri = np.ascontiguousarray(priorities, dtype=np.float64)
        if idx.shape != pri.shape:
            raise ValueError("indices and priorities must have the same shape")
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= self.capacity:
            raise IndexError("leaf index out of range")
        if not np.all(np.isfinite(pri)) or pri.min() < 0.0:
            raise ValueError("priorities must be finite and >= 0")
        if self.backend == "python" and np.unique(idx).size != idx.size:
            # vectorised scatter keeps an arbitrary duplicate; match the
            # sequential semantics of the compiled kernel
            _, last = np.unique(idx[::-1], return_index=True)
            keep = idx.size - 1 - last
            idx, pri = idx[keep], pri[keep]
        self._k.tree_set_many(self.nodes, self.offset, idx, pri)
        self.size = max(self.size, int(idx.max()) + 1)

    def load(self, leaves) -> None:
        """Replace every leaf at once and rebuild the internal nodes in O(n)."""
        leaves = np.asarray(leaves, dtype=np.float64)
        if leaves.shape != (self.capacity,):
            raise ValueError(f"expected {self.capacity} leaves, got shape {leaves.shape}")
        if not np.all(np.isfinite(leaves)) or (leaves.size and leaves.min() < 0.0):
            raise ValueError("priorities must be finite and >= 0")
        self.nodes[self.offset:self.offset + self.capacity] = leaves
        self._k.tree_rebuild(self.nodes, self.offset, self.capacity)
        self.size = self.capacity

    def find_prefix(self, value: float) -> int:
        """Smallest leaf index whose inclusive prefix sum exceeds ``value``."""
        total = self.total()
        if total <= 0.0:
            raise ValueError("cannot search an empty tree (total priority is 0)")
        if not 0.0 <= value < total:
            raise ValueError(f"value {value} outside [0, {total})")
        return int(self._k.tree_find(self.nodes, self.offset, np.array([value], dtype=np.float64))[0])

    def find_prefix_many(self, values) -> np.ndarray:
        total = self.total()
        if total <= 0.0:
            raise ValueError("cannot search an empty tree (total priority is 0)")
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.size and (values.min() < 0.0 or values.max() >= total):
            raise ValueError(f"values must lie in [0, {total})")
        return self._k.tree_find(self.nodes, self.offset, values)

    def stratified_sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Split ``[0, total)`` into ``n`` equal ranges and draw one leaf per range."""
        if n < 1:
            raise ValueError(f"batch size must be >= 1, got {n}")
        total = self.total()
        if total <= 0.0:
            raise ValueError("cannot sample from an empty tree (total priority is 0)")
        # values are clamped below total; the descent guard handles rounding
        return self._k.tree_stratified(self.nodes, self.offset, rng.random(n))

    def max_leaf(self) -> float:
        if self.size == 0:
            raise ValueError("max_leaf of an empty tree")
        return float(self.leaves[:self.size].max())

    def check_invariant(self, rtol: float = 1e-9) -> bool:
        """Full scan: every internal node equals the sum of its children."""
        parents = np.arange(self.offset)
        child_sum = self.nodes[2 * parents + 1] + self.nodes[2 * parents + 2]
        scale = np.maximum(np.abs(child_sum), 1e-300)
        return bool(np.all(np.abs(self.nodes[:self.offset] - child_sum) <= rtol * scale))
