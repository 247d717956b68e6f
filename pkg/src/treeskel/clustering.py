"""Branch segment clustering: k-means over XYZ with the voxel-count rule.

The number of segments follows the occupancy of a 1 cm voxel grid:
2 clusters per 100 occupied voxels, at least 1. Clustering itself is
Lloyd's algorithm with k-means++ seeding, run to an assignment fixed
point (or 100 iterations), best of a fixed number of restarts by
within-cluster sum of squares.
"""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud, voxelize
from .errors import ParameterError

MAX_LLOYD_ITERATIONS = 100


def cluster_count(cloud: PointCloud, voxel_size: float = 0.01,
                  per_100_voxels: float = 2.0) -> int:
    """Cluster budget from voxel occupancy: round(2 * voxels / 100), min 1."""
    if len(cloud) == 0:
        raise ParameterError("empty cloud has no cluster count")
    occupied = voxelize(cloud, voxel_size).occupied_count
    k = int(np.floor(per_100_voxels * occupied / 100.0 + 0.5))
    return max(1, k)


def kmeans(xyz: np.ndarray, k: int, seed: int, restarts: int = 5):
    """k-means over raw coordinates.

    Returns (assignment array, centers, within-cluster sum of squares).
    Deterministic for a fixed seed; every cluster in the result is
    non-empty. Raises if k exceeds the number of points.
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    n = len(xyz)
    if k < 1:
        raise ParameterError("k must be >= 1")
    if k > n:
        raise ParameterError(f"k={k} exceeds point count {n}")
    if k == n:
        return np.arange(n), xyz.copy(), 0.0

    best = None
    for ss in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(ss)
        centers = _kmeans_pp_init(xyz, k, rng)
        assign, centers, wcss = _lloyd(xyz, centers)
        if best is None or wcss < best[2]:
            best = (assign, centers, wcss)
    return best


def _kmeans_pp_init(xyz: np.ndarray, k: int, rng) -> np.ndarray:
    n = len(xyz)
    centers = np.empty((k, 3))
    centers[0] = xyz[rng.integers(0, n)]
    d2 = ((xyz - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a center: any choice works
            centers[i] = xyz[rng.integers(0, n)]
            continue
        centers[i] = xyz[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((xyz - centers[i]) ** 2).sum(axis=1))
    return centers


def _lloyd(xyz: np.ndarray, centers: np.ndarray):
    n, k = len(xyz), len(centers)
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(MAX_LLOYD_ITERATIONS):
        d2 = _sq_distances(xyz, centers)
        new_assign = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(n), new_assign]

        # revive empty clusters with the points worst served by their center
        counts = np.bincount(new_assign, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            worst = int(np.argmax(point_d2))
            new_assign[worst] = empty
            point_d2[worst] = -1.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = xyz[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)

    d2 = _sq_distances(xyz, centers)
    wcss = float(d2[np.arange(n), assign].sum())
    return assign, centers, wcss


def _sq_distances(xyz: np.ndarray, centers: np.ndarray,
                  chunk: int = 65536) -> np.ndarray:
    """Squared point-to-center distance matrix, chunked to bound memory."""
    n = len(xyz)
    out = np.empty((n, len(centers)))
    c2 = (centers ** 2).sum(axis=1)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        block = xyz[start:stop]
        out[start:stop] = ((block ** 2).sum(axis=1)[:, None]
                           - 2.0 * block @ centers.T + c2[None, :])
    np.maximum(out, 0.0, out=out)
    return out
