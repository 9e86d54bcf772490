"""Union-find over integer node ids, used for fusion grouping."""

from __future__ import annotations

import numpy as np


class UnionFind:
    def __init__(self, size: int):
        self.parent = list(range(size))
        self.rank = [0] * size

    def find(self, u: int) -> int:
        root = u
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[u] != root:  # path compression
            self.parent[u], u = root, self.parent[u]
        return root

    def union(self, u: int, v: int) -> None:
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            return
        if self.rank[ru] < self.rank[rv]:
            ru, rv = rv, ru
        self.parent[rv] = ru
        if self.rank[ru] == self.rank[rv]:
            self.rank[ru] += 1

    def labels(self) -> np.ndarray:
        """Component labels renumbered 0..n_components-1 in first-seen order."""
        out = np.empty(len(self.parent), dtype=np.int64)
        seen: dict[int, int] = {}
        for i in range(len(self.parent)):
            root = self.find(i)
            if root not in seen:
                seen[root] = len(seen)
            out[i] = seen[root]
        return out
