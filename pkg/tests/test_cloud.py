import numpy as np
import pytest

from treeskel.cloud import PointCloud, SpatialIndex, voxelize
from treeskel.errors import ParameterError

from conftest import make_cloud, random_cloud


class TestPointCloud:
    def test_basic_construction(self):
        c = make_cloud([[0, 0, 0], [1, 2, 3]], colors=[[1, 2, 3], [4, 5, 6]])
        assert len(c) == 2
        assert c.colors.dtype == np.int64
        assert list(c.source_id) == [0, 1]

    def test_rejects_nonfinite(self):
        with pytest.raises(ParameterError):
            make_cloud([[0, 0, np.nan]])

    def test_rejects_bad_normals(self):
        with pytest.raises(ParameterError):
            make_cloud([[0, 0, 0]], normals=[[1, 1, 0]])

    def test_rejects_mismatched_field(self):
        with pytest.raises(ParameterError):
            make_cloud([[0, 0, 0], [1, 1, 1]], scalar_fields={"c": [1]})

    def test_rejects_duplicate_source_ids(self):
        with pytest.raises(ParameterError):
            make_cloud([[0, 0, 0], [1, 1, 1]], source_id=[3, 3])

    def test_arrays_are_readonly(self):
        c = make_cloud([[0, 0, 0]])
        with pytest.raises(ValueError):
            c.xyz[0, 0] = 1.0

    def test_select_keeps_ids_and_fields(self):
        c = make_cloud([[0, 0, 0], [1, 1, 1], [2, 2, 2]],
                       scalar_fields={"class": [5, 6, 7]})
        sub = c.select(np.array([False, True, True]))
        assert list(sub.source_id) == [1, 2]
        assert list(sub.field("class")) == [6, 7]

    def test_with_field_replaces(self):
        c = make_cloud([[0, 0, 0]]).with_field("a", [1])
        c2 = c.with_field("a", [9])
        assert c.field("a")[0] == 1
        assert c2.field("a")[0] == 9

    def test_point_accessor(self):
        c = make_cloud([[1, 2, 3]], colors=[[10, 20, 30]], source_id=[7])
        p = c.point(0)
        assert (p.x, p.y, p.z) == (1, 2, 3)
        assert p.color == (10, 20, 30)
        assert p.source_id == 7

    def test_rows_for_source_ids(self):
        c = make_cloud(np.arange(15).reshape(5, 3), source_id=[9, 4, 7, 1, 3])
        rows = c.rows_for_source_ids(np.array([7, 9, 3]))
        assert list(rows) == [2, 0, 4]
        with pytest.raises(ParameterError):
            c.rows_for_source_ids(np.array([2]))


class TestSpatialIndex:
    def test_radius_matches_brute_force(self, rng):
        # Exact set equality against a brute-force scan, on many clouds.
        for trial in range(10):
            cloud = random_cloud(rng, 200, scale=0.5)
            index = SpatialIndex(cloud)
            for _ in range(20):
                q = rng.uniform(0, 0.5, size=3)
                r = rng.uniform(0.01, 0.3)
                brute = np.flatnonzero(
                    np.einsum("ij,ij->i", cloud.xyz - q, cloud.xyz - q) <= r * r)
                assert np.array_equal(index.radius(q, r), brute)

    def test_radius_includes_boundary(self):
        cloud = make_cloud([[0, 0, 0], [0.05, 0, 0]])
        index = SpatialIndex(cloud)
        assert list(index.radius([0, 0, 0], 0.05)) == [0, 1]

    def test_counts_match_lists(self, rng):
        cloud = random_cloud(rng, 300, scale=0.3)
        index = SpatialIndex(cloud)
        counts = index.radius_counts(cloud.xyz, 0.05)
        lists = index.radius_lists(cloud.xyz, 0.05)
        assert np.array_equal(counts, [len(l) for l in lists])

    def test_empty_cloud(self):
        index = SpatialIndex(make_cloud(np.empty((0, 3))))
        assert index.radius([0, 0, 0], 1.0).size == 0


class TestVoxelize:
    def test_colocated_points_one_voxel(self):
        cloud = make_cloud([[0.001, 0.002, 0.003], [0.004, 0.001, 0.009],
                            [0.002, 0.008, 0.001], [0.009, 0.009, 0.009]])
        assert voxelize(cloud, 0.01).occupied_count == 1

    def test_boundary_straddle(self):
        cloud = make_cloud([[0, 0, 0], [0.011, 0, 0]])
        assert voxelize(cloud, 0.01).occupied_count == 2

    def test_matches_independent_hash(self, rng):
        # Set-of-cells oracle: hash floor-quantized tuples independently.
        cloud = random_cloud(rng, 500, scale=0.2)
        grid = voxelize(cloud, 0.01)
        expected = {tuple(int(np.floor(v / 0.01)) for v in p)
                    for p in cloud.xyz}
        assert grid.occupied == expected

    def test_negative_coordinates(self):
        cloud = make_cloud([[-0.005, 0, 0], [0.005, 0, 0]])
        grid = voxelize(cloud, 0.01)
        assert grid.occupied == {(-1, 0, 0), (0, 0, 0)}

    def test_rejects_bad_size(self):
        with pytest.raises(ParameterError):
            voxelize(make_cloud([[0, 0, 0]]), 0.0)
