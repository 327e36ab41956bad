"""Normal-based graph-cut over-segmentation of point clouds.

Builds a k-NN graph over points, weights edges by angular dissimilarity of
the endpoint normals, and merges regions greedily in ascending weight order
with the classic adaptive threshold ``merge_threshold / |component|``. A
post-pass folds components below ``min_size`` into the neighbor they touch
through their cheapest edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud

__all__ = ["SuperpointPartition", "partition_superpoints"]


@dataclass
class SuperpointPartition:
    """Disjoint superpoint membership over all N points.

    assignment: (N,) dense superpoint ids in [0, count)
    centroids:  (L, 3) mean position of each superpoint
    sizes:      (L,) member counts
    members:    per-superpoint sorted point index arrays
    """

    assignment: np.ndarray
    count: int
    centroids: np.ndarray
    sizes: np.ndarray
    members: list[np.ndarray] = field(repr=False)

    @classmethod
    def from_assignment(
        cls, assignment: np.ndarray, positions: np.ndarray
    ) -> "SuperpointPartition":
        assignment = np.asarray(assignment, dtype=np.int64)
        positions = np.asarray(positions, dtype=np.float64)
        if assignment.ndim != 1 or len(assignment) != len(positions):
            raise ValueError("assignment must have one entry per point")
        count = int(assignment.max()) + 1 if len(assignment) else 0
        if count < 1 or assignment.min() < 0:
            raise ValueError("assignment ids must be dense and nonnegative")
        order = np.argsort(assignment, kind="stable")
        bounds = np.searchsorted(assignment[order], np.arange(count + 1))
        members = [order[bounds[i] : bounds[i + 1]] for i in range(count)]
        sizes = np.diff(bounds).astype(np.int64)
        if np.any(sizes == 0):
            raise ValueError("every superpoint must be nonempty")
        centroids = np.stack([positions[m].mean(axis=0) for m in members])
        return cls(assignment, count, centroids, sizes, members)

    def __len__(self) -> int:
        return self.count


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.internal = [0.0] * n

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        # attach the smaller tree; ties keep the lower index as root
        if self.size[a] < self.size[b] or (self.size[a] == self.size[b] and b < a):
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        return a


def partition_superpoints(
    cloud: PointCloud,
    normals: np.ndarray,
    knn_k: int = 10,
    merge_threshold: float = 0.05,
    min_size: int = 20,
) -> SuperpointPartition:
    """Partition a cloud into superpoints; see module docstring.

    Edge weight is ``1 - |n_i . n_j|`` (orientation-agnostic). Edges are
    processed in ascending (weight, i, j) order, which makes the result a
    pure function of the inputs. Clouds with fewer than ``knn_k + 1`` points
    collapse to a single superpoint. Components smaller than ``min_size``
    survive only when they are isolated in the k-NN graph.
    """
    if knn_k < 1:
        raise ValueError("knn_k must be at least 1")
    if merge_threshold <= 0:
        raise ValueError("merge_threshold must be positive")
    if min_size < 1:
        raise ValueError("min_size must be at least 1")
    positions = cloud.positions
    n = len(positions)
    if n < knn_k + 1:
        return SuperpointPartition.from_assignment(np.zeros(n, dtype=np.int64), positions)

    normals = np.asarray(normals, dtype=np.float64)
    if normals.shape != (n, 3):
        raise ValueError("normals must be (N, 3)")

    tree = cKDTree(positions)
    _, nbr = tree.query(positions, k=knn_k + 1)
    src = np.repeat(np.arange(n), knn_k)
    dst = nbr[:, 1:].reshape(-1)
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    edges = np.unique(np.stack([lo, hi], axis=1), axis=0)
    weights = 1.0 - np.abs(np.einsum("ij,ij->i", normals[edges[:, 0]], normals[edges[:, 1]]))
    weights = np.clip(weights, 0.0, 1.0)
    order = np.lexsort((edges[:, 1], edges[:, 0], weights))
    e0 = edges[order, 0].tolist()
    e1 = edges[order, 1].tolist()
    ws = weights[order].tolist()

    uf = _UnionFind(n)
    for i in range(len(ws)):
        ra = uf.find(e0[i])
        rb = uf.find(e1[i])
        if ra == rb:
            continue
        w = ws[i]
        if (
            w <= uf.internal[ra] + merge_threshold / uf.size[ra]
            and w <= uf.internal[rb] + merge_threshold / uf.size[rb]
        ):
            uf.internal[uf.union(ra, rb)] = w

    # ascending order means each small component meets its cheapest neighbor first
    for i in range(len(ws)):
        ra = uf.find(e0[i])
        rb = uf.find(e1[i])
        if ra != rb and (uf.size[ra] < min_size or uf.size[rb] < min_size):
            uf.union(ra, rb)

    labels = np.empty(n, dtype=np.int64)
    remap: dict[int, int] = {}
    for i in range(n):
        root = uf.find(i)
        label = remap.get(root)
        if label is None:
            label = len(remap)
            remap[root] = label
        labels[i] = label
    return SuperpointPartition.from_assignment(labels, positions)
