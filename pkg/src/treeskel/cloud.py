"""Point cloud container, spatial queries and voxel occupancy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParameterError


@dataclass(frozen=True)
class Point3:
    """A single point, mostly used at API boundaries. Coordinates in meters."""

    x: float
    y: float
    z: float
    color: Optional[tuple] = None
    normal: Optional[tuple] = None
    source_id: int = 0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class PointCloud:
    """Immutable set of 3D points with optional colors, normals and per-point
    scalar fields.

    Coordinates are meters. ``source_id`` identifies each point stably across
    pipeline stages: filters return sub-clouds that keep the ids of the
    surviving points, so results can always be mapped back to the original
    input.

    Attributes
    ----------
    xyz : (n, 3) float64, read-only
    colors : (n, 3) int64 in [0, 255], or None
    normals : (n, 3) float64 unit vectors, or None
    scalar_fields : dict of name -> (n,) array (int64 or float64)
    source_id : (n,) int64, unique
    """

    def __init__(self, xyz, colors=None, normals=None, scalar_fields=None,
                 source_id=None):
        xyz = np.array(xyz, dtype=np.float64).reshape(-1, 3)
        if xyz.size and not np.all(np.isfinite(xyz)):
            raise ParameterError("point coordinates must be finite")
        n = xyz.shape[0]

        if colors is not None:
            colors = np.array(colors, dtype=np.int64).reshape(n, 3)
            if colors.size and (colors.min() < 0 or colors.max() > 255):
                raise ParameterError("color channels must be in [0, 255]")
            colors = _readonly(colors)
        if normals is not None:
            normals = np.array(normals, dtype=np.float64).reshape(n, 3)
            if normals.size:
                norms = np.linalg.norm(normals, axis=1)
                if np.any(np.abs(norms - 1.0) > 1e-9):
                    raise ParameterError("normals must be unit length")
            normals = _readonly(normals)

        if source_id is None:
            source_id = np.arange(n, dtype=np.int64)
        else:
            source_id = np.array(source_id, dtype=np.int64).reshape(n)
            if n and np.unique(source_id).size != n:
                raise ParameterError("source_id values must be unique")

        fields = {}
        for name, values in (scalar_fields or {}).items():
            values = np.asarray(values)
            if values.shape != (n,):
                raise ParameterError(
                    f"scalar field {name!r} has {values.size} values "
                    f"for {n} points")
            dtype = np.int64 if values.dtype.kind in "iub" else np.float64
            fields[name] = _readonly(values.astype(dtype))

        self.xyz = _readonly(xyz)
        self.colors = colors
        self.normals = normals
        self.scalar_fields = fields
        self.source_id = _readonly(source_id)

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @property
    def n_points(self) -> int:
        return self.xyz.shape[0]

    def has_field(self, name: str) -> bool:
        return name in self.scalar_fields

    def field(self, name: str) -> np.ndarray:
        return self.scalar_fields[name]

    def point(self, i: int) -> Point3:
        """Single-point view at row ``i``."""
        color = tuple(int(c) for c in self.colors[i]) if self.colors is not None else None
        normal = tuple(float(c) for c in self.normals[i]) if self.normals is not None else None
        x, y, z = (float(v) for v in self.xyz[i])
        return Point3(x, y, z, color=color, normal=normal,
                      source_id=int(self.source_id[i]))

    def select(self, rows) -> "PointCloud":
        """New cloud keeping only ``rows`` (bool mask or index array),
        preserving row order, source ids and every attached field."""
        rows = np.asarray(rows)
        return PointCloud(
            self.xyz[rows],
            colors=self.colors[rows] if self.colors is not None else None,
            normals=self.normals[rows] if self.normals is not None else None,
            scalar_fields={k: v[rows] for k, v in self.scalar_fields.items()},
            source_id=self.source_id[rows],
        )

    def with_field(self, name: str, values) -> "PointCloud":
        """New cloud with scalar field ``name`` added or replaced."""
        fields = dict(self.scalar_fields)
        fields[name] = np.asarray(values)
        return PointCloud(self.xyz, colors=self.colors, normals=self.normals,
                          scalar_fields=fields, source_id=self.source_id)

    def with_coordinates(self, xyz, normals="keep") -> "PointCloud":
        """New cloud with replaced coordinates (same points otherwise)."""
        if isinstance(normals, str) and normals == "keep":
            normals = self.normals
        return PointCloud(xyz, colors=self.colors, normals=normals,
                          scalar_fields=self.scalar_fields,
                          source_id=self.source_id)

    def rows_for_source_ids(self, ids) -> np.ndarray:
        """Row positions of the given source ids (all must be present)."""
        order = np.argsort(self.source_id)
        pos = np.searchsorted(self.source_id, ids, sorter=order)
        if np.any(pos >= len(self)) or np.any(self.source_id[order[np.minimum(pos, len(self) - 1)]] != ids):
            raise ParameterError("unknown source ids requested")
        return order[pos]


class SpatialIndex:
    """Fixed-radius and nearest-neighbor queries over an immutable cloud.

    Thin wrapper around a k-d tree; safe to share between read-only
    consumers. Radius queries are closed balls: they return exactly the
    points with ||p - q|| <= r.
    """

    def __init__(self, cloud: PointCloud):
        self.cloud = cloud
        self._tree = cKDTree(cloud.xyz) if len(cloud) else None

    def radius(self, q, r: float) -> np.ndarray:
        """Indices of points within distance r of q, ascending."""
        if self._tree is None:
            return np.empty(0, dtype=np.int64)
        idx = self._tree.query_ball_point(np.asarray(q, dtype=np.float64), r)
        return np.sort(np.asarray(idx, dtype=np.int64))

    def radius_counts(self, qs, r: float, workers: int = 1) -> np.ndarray:
        """Number of points within r of each query point (vectorized)."""
        if self._tree is None:
            return np.zeros(len(qs), dtype=np.int64)
        return np.asarray(
            self._tree.query_ball_point(qs, r, return_length=True,
                                        workers=workers),
            dtype=np.int64)

    def radius_lists(self, qs, r: float, workers: int = 1) -> list:
        """Neighbor index lists for a batch of query points. The worker
        count only parallelizes the search; results are identical for any
        value."""
        if self._tree is None:
            return [[] for _ in range(len(qs))]
        return self._tree.query_ball_point(qs, r, workers=workers)

    def pairs_within(self, r: float) -> np.ndarray:
        """All index pairs (i < j) at distance <= r, as an (m, 2) array."""
        if self._tree is None:
            return np.empty((0, 2), dtype=np.int64)
        return self._tree.query_pairs(r, output_type="ndarray")

    def nearest(self, q, k: int = 1):
        """Distances and indices of the k nearest points to q."""
        if self._tree is None:
            raise ParameterError("empty cloud has no neighbors")
        return self._tree.query(np.asarray(q, dtype=np.float64), k=k)

    @property
    def kdtree(self) -> cKDTree:
        return self._tree


@dataclass(frozen=True)
class VoxelGrid:
    """Occupancy of a regular grid: cell = floor(coordinate / voxel_size)."""

    voxel_size: float
    occupied: frozenset

    @property
    def occupied_count(self) -> int:
        return len(self.occupied)


def voxelize(cloud: PointCloud, voxel_size: float) -> VoxelGrid:
    """Quantize a cloud onto a grid of the given cell size (meters).

    Every point maps to exactly one cell; the grid records the set of
    occupied cells.
    """
    if voxel_size <= 0:
        raise ParameterError("voxel_size must be positive")
    if len(cloud) == 0:
        return VoxelGrid(voxel_size, frozenset())
    cells = np.floor(cloud.xyz / voxel_size).astype(np.int64)
    occupied = frozenset(map(tuple, np.unique(cells, axis=0)))
    return VoxelGrid(voxel_size, occupied)
