"""Per-point geometric features from local neighborhood covariance.

Twenty features per point, computed from fixed-radius neighborhoods at
2, 4, 8 and 15 cm. With lambda1 >= lambda2 >= lambda3 the eigenvalues of
the neighborhood covariance and S their sum:

    PCA1              lambda1 / S
    PCA2              lambda2 / S
    omnivariance      (lambda1 * lambda2 * lambda3) ** (1/3)
    linearity         (lambda1 - lambda2) / lambda1
    planarity         (lambda2 - lambda3) / lambda1
    surface variation lambda3 / S
    verticality       1 - |e3 . z| with e3 the smallest-eigenvalue vector
    normal change rate  mean over neighbors i of (1 - |n . n_i|)

Neighborhoods include the query point itself. Degenerate neighborhoods
(< 3 points or S == 0) yield zero for every ratio feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, SpatialIndex
from .errors import ParameterError
from .fitting import CylinderModel

FEATURE_RADII = (0.02, 0.04, 0.08, 0.15)

FEATURE_NAMES = tuple(f"f{i}" for i in range(1, 21))

# column -> (feature kind, radius index into FEATURE_RADII)
_LAYOUT = {
    "counts": {0: 0, 1: 1, 2: 2, 3: 3},          # f1..f4
    "pca1": {4: 0, 5: 1, 6: 2},                   # f5..f7
    "pca2": {7: 0, 8: 2},                         # f8, f9
    "omni": {9: 0, 10: 1, 11: 2, 12: 3},          # f10..f13
    "linearity": {13: 0, 14: 1},                  # f14, f15
    "verticality": {15: 3},                       # f16
    "planarity": {16: 2},                         # f17
    "normal_change": {17: 2},                     # f18
    "surface_var": {18: 2},                       # f19
}


@dataclass(frozen=True)
class NeighborhoodEigen:
    """Eigen-decomposition of one neighborhood covariance.

    Eigenvalues are sorted descending and clamped at zero; eigenvectors sit
    in the columns of ``vectors`` in the same order. ``count`` neighborhoods
    smaller than 3 points report all-zero eigenvalues.
    """

    lambda1: float
    lambda2: float
    lambda3: float
    vectors: np.ndarray      # (3, 3), column i pairs with lambda_i
    count: int

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2, self.lambda3])


def eigen_features(index: SpatialIndex, point_row: int,
                   r: float) -> NeighborhoodEigen:
    """Neighborhood covariance eigen-structure for one cloud point."""
    if r <= 0:
        raise ParameterError("radius must be positive")
    xyz = index.cloud.xyz
    idx = index.radius(xyz[point_row], r)
    count = len(idx)
    if count < 3:
        return NeighborhoodEigen(0.0, 0.0, 0.0, np.eye(3), count)
    pts = xyz[idx]
    cov = np.cov(pts, rowvar=False, bias=True)
    values, vectors = np.linalg.eigh(cov)
    values = np.clip(values[::-1], 0.0, None)     # descending
    vectors = vectors[:, ::-1]
    return NeighborhoodEigen(float(values[0]), float(values[1]),
                             float(values[2]), vectors, count)


def compute_all_features(cloud: PointCloud, trunk: CylinderModel,
                         index: SpatialIndex = None,
                         chunk: int = 4096,
                         workers: int = 1) -> np.ndarray:
    """The (n, 20) feature matrix for every point of the cloud.

    Column i holds feature f(i+1). The trunk cylinder supplies f20.
    """
    if len(cloud) == 0:
        raise ParameterError("cannot compute features of an empty cloud")
    if index is None:
        index = SpatialIndex(cloud)

    n = len(cloud)
    out = np.zeros((n, 20), dtype=np.float64)
    # Center globally; all covariance features are translation invariant and
    # this keeps the moment accumulation well conditioned.
    xyz = cloud.xyz - cloud.xyz.mean(axis=0)

    per_radius = {}
    for ri, radius in enumerate(FEATURE_RADII):
        needed = any(ri in cols.values() for cols in _LAYOUT.values())
        if not needed:
            continue
        per_radius[ri] = _radius_summaries(xyz, index, radius, chunk,
                                           workers)

    for kind, cols in _LAYOUT.items():
        for col, ri in cols.items():
            counts, lam, e3 = per_radius[ri]
            out[:, col] = _feature_column(kind, counts, lam, e3, xyz,
                                          index, FEATURE_RADII[ri], chunk,
                                          workers)
    out[:, 19] = trunk.surface_distance(cloud.xyz)
    return out


def verticality_feature(cloud: PointCloud, radius: float = 0.15,
                        index: SpatialIndex = None,
                        workers: int = 1) -> np.ndarray:
    """1 - |normal . z| per point from one neighborhood radius.

    Same definition as f16, exposed standalone because the ground/tree
    split consumes it without the other nineteen features.
    """
    if index is None:
        index = SpatialIndex(cloud)
    xyz = cloud.xyz - cloud.xyz.mean(axis=0)
    _, lam, e3 = _radius_summaries(xyz, index, radius, 4096, workers)
    vert = 1.0 - np.abs(e3[:, 2])
    vert[lam.sum(axis=1) <= 0] = 0.0
    return vert


def compute_feature_vector(index: SpatialIndex, point_row: int,
                           trunk: CylinderModel) -> np.ndarray:
    """Features f1..f20 for a single cloud point (row index).

    Matches the batch computation elementwise; prefer the batch for more
    than a handful of points.
    """
    cloud = index.cloud
    sub = compute_all_features(cloud, trunk, index=index)
    return sub[point_row]


# ---------------------------------------------------------------------------
# batched internals

def _radius_summaries(xyz: np.ndarray, index: SpatialIndex, radius: float,
                      chunk: int, workers: int = 1):
    """Neighbor counts, eigenvalues (descending) and smallest-eigenvalue
    eigenvectors for every point at one radius."""
    n = len(xyz)
    counts = np.zeros(n, dtype=np.int64)
    lam = np.zeros((n, 3), dtype=np.float64)
    e3 = np.zeros((n, 3), dtype=np.float64)
    e3[:, 2] = 1.0          # canonical normal for degenerate neighborhoods
    shift = index.cloud.xyz.mean(axis=0)

    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        lists = index.radius_lists(xyz[start:stop] + shift, radius,
                                   workers=workers)
        flat, sizes = _flatten_lists(lists)
        counts[start:stop] = sizes

        ok = sizes >= 3
        if not np.any(ok):
            continue
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        pts = xyz[flat]
        sums = np.add.reduceat(pts, starts, axis=0)
        prods = pts[:, [0, 0, 0, 1, 1, 2]] * pts[:, [0, 1, 2, 1, 2, 2]]
        sqsums = np.add.reduceat(prods, starts, axis=0)

        m = sizes.astype(np.float64)[:, None]
        mean = sums / m
        raw = sqsums / m
        cov6 = raw - mean[:, [0, 0, 0, 1, 1, 2]] * mean[:, [0, 1, 2, 1, 2, 2]]
        cov = np.empty((stop - start, 3, 3))
        cov[:, 0, 0] = cov6[:, 0]
        cov[:, 0, 1] = cov[:, 1, 0] = cov6[:, 1]
        cov[:, 0, 2] = cov[:, 2, 0] = cov6[:, 2]
        cov[:, 1, 1] = cov6[:, 3]
        cov[:, 1, 2] = cov[:, 2, 1] = cov6[:, 4]
        cov[:, 2, 2] = cov6[:, 5]

        values, vectors = np.linalg.eigh(cov[ok])
        rows = np.flatnonzero(ok) + start
        lam[rows] = np.clip(values[:, ::-1], 0.0, None)
        normals = vectors[:, :, 0]      # eigh ascending: smallest first
        flip = normals[:, 2] < 0
        normals[flip] *= -1.0
        e3[rows] = normals
    return counts, lam, e3


def _flatten_lists(lists):
    """Concatenate neighbor index lists; returns (flat indices, sizes)."""
    sizes = np.array([len(lst) for lst in lists], dtype=np.int64)
    if sizes.sum() == 0:
        return np.empty(0, dtype=np.int64), sizes
    flat = np.concatenate([np.asarray(lst, dtype=np.int64) for lst in lists
                           if len(lst)])
    return flat, sizes


def _feature_column(kind: str, counts, lam, e3, xyz, index, radius, chunk,
                    workers: int = 1):
    l1, l2, l3 = lam[:, 0], lam[:, 1], lam[:, 2]
    total = l1 + l2 + l3
    ok_sum = total > 0
    ok_l1 = l1 > 0

    if kind == "counts":
        return counts.astype(np.float64)
    if kind == "pca1":
        return np.divide(l1, total, out=np.zeros_like(l1), where=ok_sum)
    if kind == "pca2":
        return np.divide(l2, total, out=np.zeros_like(l2), where=ok_sum)
    if kind == "omni":
        return np.cbrt(l1 * l2 * l3)
    if kind == "linearity":
        return np.divide(l1 - l2, l1, out=np.zeros_like(l1), where=ok_l1)
    if kind == "planarity":
        return np.divide(l2 - l3, l1, out=np.zeros_like(l1), where=ok_l1)
    if kind == "surface_var":
        return np.divide(l3, total, out=np.zeros_like(l3), where=ok_sum)
    if kind == "verticality":
        vert = 1.0 - np.abs(e3[:, 2])
        vert[~ok_sum] = 0.0
        return vert
    if kind == "normal_change":
        return _normal_change_rate(xyz, index, radius, e3, ok_sum, chunk,
                                   workers)
    raise ValueError(kind)


def _normal_change_rate(xyz, index, radius, normals, defined, chunk,
                        workers: int = 1):
    """Mean (1 - |n_p . n_i|) over each point's neighbors at ``radius``.

    Normals come from the same radius; points with a degenerate
    neighborhood contribute the canonical vertical normal as neighbors but
    report 0 themselves.
    """
    n = len(xyz)
    out = np.zeros(n, dtype=np.float64)
    shift = index.cloud.xyz.mean(axis=0)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        lists = index.radius_lists(xyz[start:stop] + shift, radius,
                                   workers=workers)
        flat, sizes = _flatten_lists(lists)
        if not len(flat):
            continue
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        own = np.repeat(normals[start:stop], sizes, axis=0)
        dots = np.abs(np.einsum("ij,ij->i", own, normals[flat]))
        sums = np.add.reduceat(1.0 - dots, starts)
        sums[sizes == 0] = 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(sizes > 0, sums / np.maximum(sizes, 1), 0.0)
        out[start:stop] = mean
    out[~defined] = 0.0
    return out


def export_feature_matrix(path, matrix: np.ndarray) -> None:
    """Write a feature matrix as CSV with the f1..f20 header."""
    header = ",".join(FEATURE_NAMES[:matrix.shape[1]])
    np.savetxt(path, matrix, fmt="%.9g", delimiter=",", header=header,
               comments="")
