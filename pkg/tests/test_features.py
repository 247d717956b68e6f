import numpy as np
import pytest

from treeskel.cloud import PointCloud, SpatialIndex
from treeskel.features import (FEATURE_RADII, compute_all_features,
                               compute_feature_vector, eigen_features)
from treeskel.fitting import CylinderModel

from conftest import make_cloud

TRUNK = CylinderModel.make([0, 0, 0], [0, 0, 1], 0.1)


def brute_force_features(cloud, trunk):
    """Independent recomputation without any spatial index: full pairwise
    distances, per-point covariance with explicit centering."""
    xyz = cloud.xyz
    n = len(xyz)
    diff = xyz[:, None, :] - xyz[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))

    eig = {}
    normals = {}
    for r in FEATURE_RADII:
        lam = np.zeros((n, 3))
        nrm = np.tile([0.0, 0.0, 1.0], (n, 1))
        counts = (dist <= r).sum(axis=1)
        for i in range(n):
            nbr = xyz[dist[i] <= r]
            if len(nbr) < 3:
                continue
            c = nbr - nbr.mean(axis=0)
            cov = c.T @ c / len(nbr)
            w, v = np.linalg.eigh(cov)
            lam[i] = np.clip(w[::-1], 0, None)
            e3 = v[:, 0]
            if e3[2] < 0:
                e3 = -e3
            nrm[i] = e3
        eig[r] = (counts, lam)
        normals[r] = nrm

    out = np.zeros((n, 20))
    for j, r in enumerate(FEATURE_RADII):
        out[:, j] = eig[r][0]

    def ratios(r):
        counts, lam = eig[r]
        s = lam.sum(axis=1)
        l1 = lam[:, 0]
        with np.errstate(invalid="ignore", divide="ignore"):
            pca1 = np.where(s > 0, lam[:, 0] / s, 0)
            pca2 = np.where(s > 0, lam[:, 1] / s, 0)
            lin = np.where(l1 > 0, (lam[:, 0] - lam[:, 1]) / l1, 0)
            plan = np.where(l1 > 0, (lam[:, 1] - lam[:, 2]) / l1, 0)
            sv = np.where(s > 0, lam[:, 2] / s, 0)
        return pca1, pca2, lin, plan, sv, np.cbrt(lam.prod(axis=1)), s

    p1_2, p2_2, lin_2, _, _, om_2, _ = ratios(0.02)
    p1_4, _, lin_4, _, _, om_4, _ = ratios(0.04)
    p1_8, p2_8, _, plan_8, sv_8, om_8, s8 = ratios(0.08)
    _, _, _, _, _, om_15, s15 = ratios(0.15)
    out[:, 4], out[:, 5], out[:, 6] = p1_2, p1_4, p1_8
    out[:, 7], out[:, 8] = p2_2, p2_8
    out[:, 9], out[:, 10], out[:, 11], out[:, 12] = om_2, om_4, om_8, om_15
    out[:, 13], out[:, 14] = lin_2, lin_4
    vert = 1.0 - np.abs(normals[0.15][:, 2])
    vert[s15 <= 0] = 0.0
    out[:, 15] = vert
    out[:, 16] = plan_8
    n8 = normals[0.08]
    for i in range(n):
        nbr = np.flatnonzero(dist[i] <= 0.08)
        if s8[i] <= 0:
            continue
        out[i, 17] = np.mean(1.0 - np.abs(n8[nbr] @ n8[i]))
    out[:, 18] = sv_8
    out[:, 19] = trunk.surface_distance(xyz)
    return out


class TestEigenFeatures:
    def test_collinear_points(self):
        xyz = np.column_stack([np.linspace(0, 0.01, 10),
                               np.zeros(10), np.zeros(10)])
        index = SpatialIndex(make_cloud(xyz))
        e = eigen_features(index, 0, 0.02)
        assert e.lambda2 == pytest.approx(0.0, abs=1e-12)
        assert e.lambda3 == pytest.approx(0.0, abs=1e-12)
        assert e.lambda1 > 0

    def test_planar_disk(self, rng):
        r = np.sqrt(rng.uniform(0, 1, 500)) * 0.01
        t = rng.uniform(0, 2 * np.pi, 500)
        xyz = np.column_stack([r * np.cos(t), r * np.sin(t), np.zeros(500)])
        index = SpatialIndex(make_cloud(xyz))
        e = eigen_features(index, 0, 0.05)
        assert e.lambda3 == pytest.approx(0.0, abs=1e-12)
        assert e.lambda1 == pytest.approx(e.lambda2, rel=0.2)

    def test_isotropic_gaussian(self, rng):
        xyz = rng.normal(0, 0.01, size=(5000, 3))
        cloud = make_cloud(xyz)
        index = SpatialIndex(cloud)
        e = eigen_features(index, 0, 10.0)
        assert e.count == 5000
        assert e.lambda1 / e.lambda3 <= 1.2
        # independent accumulation pass
        c = xyz - xyz.mean(axis=0)
        cov = c.T @ c / len(xyz)
        w = np.linalg.eigvalsh(cov)
        assert e.lambda1 == pytest.approx(w[2], rel=1e-9)
        assert e.lambda3 == pytest.approx(w[0], rel=1e-9)

    def test_small_neighborhood_degenerate(self):
        index = SpatialIndex(make_cloud([[0, 0, 0], [1, 1, 1]]))
        e = eigen_features(index, 0, 0.01)
        assert e.count == 1
        assert e.lambda1 == 0.0


class TestFeatureVector:
    def test_vertical_wall_verticality(self, rng):
        # Dense vertical wall, gently curved: surface normal horizontal at a
        # point far from the wall edges.
        t = rng.uniform(0, 1.2, 6000)
        phi = rng.uniform(0, np.pi / 2, 6000)
        xyz = np.column_stack([0.5 * np.cos(phi), 0.5 * np.sin(phi), t])
        xyz[0] = [0.5 * np.cos(0.8), 0.5 * np.sin(0.8), 0.6]
        cloud = make_cloud(xyz)
        fv = compute_feature_vector(SpatialIndex(cloud), 0, TRUNK)
        assert fv[15] > 0.95

    def test_horizontal_plane(self, rng):
        xyz = np.column_stack([rng.uniform(0, 0.5, (12000, 2)),
                               np.zeros(12000)])
        cloud = make_cloud(xyz)
        index = SpatialIndex(cloud)
        # interior point, away from the sheet boundary
        mid = np.argmin(np.linalg.norm(xyz - [0.25, 0.25, 0], axis=1))
        fv = compute_feature_vector(index, int(mid), TRUNK)
        assert fv[15] == pytest.approx(0.0, abs=1e-9)    # verticality
        assert fv[16] > 0.85                             # planarity

    def test_cylinder_distance_feature(self, rng):
        xyz = np.array([[0.1, 0.0, 0.5], [0.2, 0.0, 0.5]])
        cloud = make_cloud(xyz)
        F = compute_all_features(cloud, TRUNK)
        assert F[0, 19] == pytest.approx(0.0, abs=1e-12)
        assert F[1, 19] == pytest.approx(0.1, abs=1e-12)


class TestBatchFeatures:
    def test_single_point_cloud(self):
        F = compute_all_features(make_cloud([[0.3, 0.2, 0.5]]), TRUNK)
        assert np.allclose(F[0, :4], 1.0)
        assert np.allclose(F[0, 4:19], 0.0)

    def test_matches_brute_force(self, rng):
        xyz = rng.uniform(0, 0.2, size=(500, 3))
        cloud = make_cloud(xyz)
        F = compute_all_features(cloud, TRUNK)
        expected = brute_force_features(cloud, TRUNK)
        assert np.allclose(F, expected, atol=1e-8)

    def test_batch_equals_pointwise(self, rng):
        xyz = rng.uniform(0, 0.1, size=(50, 3))
        cloud = make_cloud(xyz)
        index = SpatialIndex(cloud)
        F = compute_all_features(cloud, TRUNK, index=index)
        for i in [0, 7, 23, 49]:
            np.testing.assert_allclose(
                compute_feature_vector(index, i, TRUNK), F[i], atol=1e-12)


class TestFeatureInvariants:
    def test_algebraic_identity(self, rng):
        # linearity + planarity + lambda3/lambda1 = 1 when lambda1 > 0
        xyz = rng.uniform(0, 0.1, size=(300, 3))
        cloud = make_cloud(xyz)
        index = SpatialIndex(cloud)
        for i in range(0, 300, 17):
            e = eigen_features(index, i, 0.05)
            if e.lambda1 <= 0:
                continue
            lin = (e.lambda1 - e.lambda2) / e.lambda1
            plan = (e.lambda2 - e.lambda3) / e.lambda1
            assert lin + plan + e.lambda3 / e.lambda1 == pytest.approx(
                1.0, abs=1e-9)

    def test_translation_invariance(self, rng):
        xyz = rng.uniform(0, 0.15, size=(200, 3))
        cloud = make_cloud(xyz)
        moved = make_cloud(xyz + np.array([5.0, -3.0, 2.0]))
        trunk2 = CylinderModel.make(
            np.asarray(TRUNK.axis_point) + [5.0, -3.0, 2.0],
            TRUNK.axis_dir, TRUNK.radius)
        F1 = compute_all_features(cloud, TRUNK)
        F2 = compute_all_features(moved, trunk2)
        # omnivariance sees last-ulp shifts through cbrt of a tiny product
        assert np.allclose(F1, F2, atol=1e-8)

    def test_ratio_features_rotation_invariant(self, rng):
        xyz = rng.uniform(0, 0.15, size=(200, 3))
        theta = 0.7
        R = np.array([[np.cos(theta), -np.sin(theta), 0],
                      [np.sin(theta), np.cos(theta), 0],
                      [0, 0, 1.0]])
        # rotate about an arbitrary axis: compose two rotations
        R2 = np.array([[1, 0, 0],
                       [0, np.cos(0.4), -np.sin(0.4)],
                       [0, np.sin(0.4), np.cos(0.4)]]) @ R
        F1 = compute_all_features(make_cloud(xyz), TRUNK)
        F2 = compute_all_features(make_cloud(xyz @ R2.T), TRUNK)
        ratio_cols = [4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 16, 18]
        assert np.allclose(F1[:, ratio_cols], F2[:, ratio_cols], atol=1e-7)

    def test_verticality_invariant_under_z_rotation(self, rng):
        xyz = rng.uniform(0, 0.15, size=(200, 3))
        theta = 1.1
        Rz = np.array([[np.cos(theta), -np.sin(theta), 0],
                       [np.sin(theta), np.cos(theta), 0],
                       [0, 0, 1.0]])
        F1 = compute_all_features(make_cloud(xyz), TRUNK)
        F2 = compute_all_features(make_cloud(xyz @ Rz.T), TRUNK)
        assert np.allclose(F1[:, 15], F2[:, 15], atol=1e-7)

    def test_counts_monotone_in_radius(self, rng):
        xyz = rng.uniform(0, 0.2, size=(400, 3))
        F = compute_all_features(make_cloud(xyz), TRUNK)
        assert np.all(F[:, 0] <= F[:, 1])
        assert np.all(F[:, 1] <= F[:, 2])
        assert np.all(F[:, 2] <= F[:, 3])

    def test_ratio_ranges(self, rng):
        xyz = rng.uniform(0, 0.1, size=(500, 3))
        F = compute_all_features(make_cloud(xyz), TRUNK)
        dense = F[:, 3] >= 3     # non-degenerate at the widest radius
        # PCA1 in [1/3, 1], PCA2 in [0, 1/2], surface variation in [0, 1/3]
        assert np.all(F[dense, 6] >= 1 / 3 - 1e-12)
        assert np.all(F[:, 6] <= 1.0 + 1e-12)
        assert np.all(F[:, 8] <= 0.5 + 1e-12)
        assert np.all(F[:, 18] <= 1 / 3 + 1e-12)
        for col in [4, 5, 6, 7, 8, 13, 14, 15, 16, 18]:
            assert np.all(F[:, col] >= -1e-12)
            assert np.all(F[:, col] <= 1.0 + 1e-12)
