"""Fenwick (binary indexed) trees over non-negative float weights.

Used for O(log n) proportional sampling of particle indices.  Leaves are kept
separately so the tree can be rebuilt exactly, which bounds the drift that
repeated increments accumulate in the partial sums.
"""
from __future__ import annotations

import math


class FenwickTree:
    """Prefix sums over a fixed number of slots (0-based indices)."""

    def __init__(self, weights):
        self._leaves = [float(w) for w in weights]
        for w in self._leaves:
            if not (w >= 0.0 and math.isfinite(w)):
                raise ValueError(f"weights must be finite and >= 0, got {w!r}")
        self._n = len(self._leaves)
        self._top = 1 << max(self._n.bit_length() - 1, 0) if self._n else 0
        self.rebuild()

    def rebuild(self) -> None:
        """Recompute every internal node from the leaves in O(n)."""
        n = self._n
        tree = [0.0] * (n + 1)
        for i, w in enumerate(self._leaves, start=1):
            tree[i] += w
            j = i + (i & -i)
            if j <= n:
                tree[j] += tree[i]
        self._tree = tree
        self.total = math.fsum(self._leaves)

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, index: int) -> float:
        return self._leaves[index]

    def set(self, index: int, weight: float) -> None:
        delta = weight - self._leaves[index]
        if delta == 0.0:
            return
        self._leaves[index] = weight
        self.total += delta
        tree = self._tree
        n = self._n
        j = index + 1
        while j <= n:
            tree[j] += delta
            j += j & -j

    def prefix(self, count: int) -> float:
        """Sum of the first ``count`` leaves."""
        tree = self._tree
        s = 0.0
        j = count
        while j > 0:
            s += tree[j]
            j -= j & -j
        return s

    def find(self, target: float) -> int:
        """Smallest index whose inclusive prefix sum exceeds ``target``.

        May return ``len(self)`` when rounding pushes ``target`` past the last
        partial sum; callers treat that (and zero-weight hits) as a redraw.
        """
        tree = self._tree
        n = self._n
        pos = 0
        step = self._top
        while step:
            nxt = pos + step
            if nxt <= n and tree[nxt] <= target:
                pos = nxt
                target -= tree[nxt]
            step >>= 1
        return pos

    def leaves(self) -> list[float]:
        return list(self._leaves)
