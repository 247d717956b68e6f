"""Density, outlier and connectivity filters used during preprocessing."""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _csgraph_components
from scipy.spatial import cKDTree

from .cloud import PointCloud
from .errors import ParameterError


def subsample_min_distance(cloud: PointCloud, d: float) -> PointCloud:
    """Greedy subsampling enforcing a minimum spacing ``d`` (meters).

    Points are visited in ascending source_id; a point is kept when every
    previously kept point is at least ``d`` away. The result is a subset of
    the input where all pairwise distances are >= d and every dropped point
    lies within d of a kept one. Deterministic; idempotent for fixed d.
    """
    if d <= 0:
        raise ParameterError("minimum distance must be positive")
    n = len(cloud)
    if n == 0:
        return cloud

    # Conflicting pairs are those strictly closer than d; pairs at exactly d
    # are allowed to coexist.
    tree = cKDTree(cloud.xyz)
    pairs = tree.query_pairs(d, output_type="ndarray")
    if len(pairs):
        diff = cloud.xyz[pairs[:, 0]] - cloud.xyz[pairs[:, 1]]
        pairs = pairs[np.linalg.norm(diff, axis=1) < d]

    order = np.argsort(cloud.source_id, kind="stable")
    if not len(pairs):
        return cloud

    neighbors_flat, starts, counts = _adjacency_csr(pairs, n)
    suppressed = np.zeros(n, dtype=bool)
    keep = np.zeros(n, dtype=bool)
    for row in order:
        if suppressed[row]:
            continue
        keep[row] = True
        s, c = starts[row], counts[row]
        suppressed[neighbors_flat[s:s + c]] = True
    return cloud.select(keep)


def sor_filter(cloud: PointCloud, k: int = 6, n_sigma: float = 1.0) -> PointCloud:
    """Statistical outlier removal.

    For each point, the mean distance to its k nearest neighbors is
    computed; points whose mean exceeds (global mean + n_sigma * global std)
    of those values are dropped.
    """
    if k <= 0:
        raise ParameterError("k must be positive")
    n = len(cloud)
    if n <= k:
        raise ParameterError(f"SOR needs more than k={k} points, got {n}")

    tree = cKDTree(cloud.xyz)
    dists, _ = tree.query(cloud.xyz, k=k + 1)   # self at column 0
    mean_d = dists[:, 1:].mean(axis=1)
    threshold = mean_d.mean() + n_sigma * mean_d.std()
    return cloud.select(mean_d <= threshold)


def connected_components(cloud: PointCloud, link_radius: float) -> list:
    """Partition the cloud into chain-connectivity components.

    Two points share a component iff they are joined by a chain of hops of
    length <= link_radius. Returns a list of row-index arrays sorted by
    descending size (ties by smallest member source_id).
    """
    if link_radius <= 0:
        raise ParameterError("link_radius must be positive")
    n = len(cloud)
    if n == 0:
        return []

    tree = cKDTree(cloud.xyz)
    pairs = tree.query_pairs(link_radius, output_type="ndarray")
    if len(pairs):
        ones = np.ones(len(pairs), dtype=np.int8)
        graph = coo_matrix((ones, (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, labels = _csgraph_components(graph, directed=False)
    else:
        labels = np.arange(n)

    components = []
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    boundaries = np.flatnonzero(np.diff(sorted_labels)) + 1
    for chunk in np.split(order, boundaries):
        components.append(np.sort(chunk))
    components.sort(key=lambda c: (-len(c), int(cloud.source_id[c].min())))
    return components


def keep_largest_component(cloud: PointCloud, link_radius: float) -> PointCloud:
    """Drop every point outside the largest connectivity component."""
    components = connected_components(cloud, link_radius)
    if not components:
        return cloud
    return cloud.select(components[0])


def _adjacency_csr(pairs: np.ndarray, n: int):
    """Symmetric neighbor lists in CSR form from an (m, 2) pair array."""
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    order = np.argsort(src, kind="stable")
    src, dst = src[order], dst[order]
    counts = np.bincount(src, minlength=n)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return dst, starts, counts
