"""Graph-cut partition tests against connected-component and purity oracles."""

import numpy as np
import pytest
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from seglift.geometry import PointCloud, estimate_normals
from seglift.superpoints import SuperpointPartition, partition_superpoints


def grid_plane(nx, ny, spacing, origin, axes):
    """Points on a regular grid spanned by two axis vectors."""
    u, v = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    pts = (
        np.asarray(origin)[None, :]
        + u.reshape(-1, 1) * spacing * np.asarray(axes[0])[None, :]
        + v.reshape(-1, 1) * spacing * np.asarray(axes[1])[None, :]
    )
    return pts


def as_cloud(points, labels=None):
    return PointCloud(points, np.full((len(points), 3), 0.5), labels)


def knn_components(points, k):
    """Independent oracle: connected components of the symmetrized k-NN graph."""
    tree = cKDTree(points)
    _, nbr = tree.query(points, k=k + 1)
    n = len(points)
    src = np.repeat(np.arange(n), k)
    dst = nbr[:, 1:].reshape(-1)
    graph = coo_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
    count, labels = connected_components(graph, directed=False)
    return count, labels


class TestPartition:
    def test_two_parallel_planes(self):
        a = grid_plane(20, 20, 0.05, (0, 0, 0), [(1, 0, 0), (0, 1, 0)])
        b = grid_plane(20, 20, 0.05, (0, 0, 1.0), [(1, 0, 0), (0, 1, 0)])
        pts = np.concatenate([a, b])
        cloud = as_cloud(pts)
        normals = estimate_normals(pts, 8)
        part = partition_superpoints(cloud, normals, knn_k=6, merge_threshold=0.5, min_size=10)
        comp_count, comp_labels = knn_components(pts, 6)
        assert comp_count == 2
        assert part.count == 2
        # each superpoint coincides with one graph component
        for sp in range(part.count):
            member_comps = np.unique(comp_labels[part.members[sp]])
            assert len(member_comps) == 1

    def test_single_plane_one_superpoint(self):
        pts = grid_plane(25, 25, 0.05, (0, 0, 0), [(1, 0, 0), (0, 1, 0)])
        cloud = as_cloud(pts)
        normals = estimate_normals(pts, 8)
        part = partition_superpoints(cloud, normals, knn_k=6, merge_threshold=5.0, min_size=1)
        assert part.count == 1

    def test_plane_meets_wall_purity(self):
        floor = grid_plane(30, 30, 0.05, (0, 0, 0), [(1, 0, 0), (0, 1, 0)])
        wall = grid_plane(30, 30, 0.05, (0, 0, 0.05), [(1, 0, 0), (0, 0, 1)])
        pts = np.concatenate([floor, wall])
        surface = np.concatenate([np.zeros(len(floor)), np.ones(len(wall))]).astype(int)
        cloud = as_cloud(pts)
        normals = estimate_normals(pts, 8)
        part = partition_superpoints(cloud, normals, knn_k=6, merge_threshold=0.01, min_size=1)
        assert part.count >= 2
        pure = 0
        for sp in range(part.count):
            members = part.members[sp]
            majority = np.bincount(surface[members]).argmax()
            pure += int(np.count_nonzero(surface[members] == majority))
        assert pure / len(pts) >= 0.95

    def test_partition_invariants(self, small_scene):
        cloud = small_scene.cloud
        normals = estimate_normals(cloud.positions, 12)
        part = partition_superpoints(cloud, normals)
        assert part.assignment.shape == (len(cloud),)
        assert part.assignment.min() == 0 and part.assignment.max() == part.count - 1
        assert int(part.sizes.sum()) == len(cloud)
        assert np.all(part.sizes > 0)
        for sp in (0, part.count // 2, part.count - 1):
            np.testing.assert_allclose(
                part.centroids[sp], cloud.positions[part.members[sp]].mean(axis=0)
            )
        # dense ids ordered by first member index
        firsts = [part.members[sp][0] for sp in range(part.count)]
        assert firsts == sorted(firsts)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(0, 1, size=(400, 3))
        cloud = as_cloud(pts)
        normals = estimate_normals(pts, 8)
        a = partition_superpoints(cloud, normals, knn_k=5, merge_threshold=0.1, min_size=5)
        b = partition_superpoints(cloud, normals, knn_k=5, merge_threshold=0.1, min_size=5)
        np.testing.assert_array_equal(a.assignment, b.assignment)

    def test_min_size_enforced_on_connected_cloud(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(0, 1, size=(500, 3))
        count, _ = knn_components(pts, 8)
        assert count == 1  # precondition: one graph component
        cloud = as_cloud(pts)
        normals = estimate_normals(pts, 8)
        part = partition_superpoints(cloud, normals, knn_k=8, merge_threshold=0.0001, min_size=25)
        assert np.all(part.sizes >= 25)

    def test_tiny_cloud_single_superpoint(self):
        pts = np.random.default_rng(5).uniform(size=(6, 3))
        cloud = as_cloud(pts)
        part = partition_superpoints(cloud, np.tile([0.0, 0.0, 1.0], (6, 1)), knn_k=10)
        assert part.count == 1
        assert part.sizes.tolist() == [6]

    def test_parameter_validation(self):
        pts = np.random.default_rng(6).uniform(size=(50, 3))
        cloud = as_cloud(pts)
        normals = np.tile([0.0, 0.0, 1.0], (50, 1))
        with pytest.raises(ValueError):
            partition_superpoints(cloud, normals, knn_k=0)
        with pytest.raises(ValueError):
            partition_superpoints(cloud, normals, merge_threshold=0.0)
        with pytest.raises(ValueError):
            partition_superpoints(cloud, normals, min_size=0)

    def test_from_assignment_rejects_empty_superpoint(self):
        with pytest.raises(ValueError):
            SuperpointPartition.from_assignment(np.array([0, 2]), np.zeros((2, 3)))
