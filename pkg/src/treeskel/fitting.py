"""RANSAC plane and cylinder estimation, ground alignment, scaling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .cloud import PointCloud
from .errors import FitError, ParameterError

_Z = np.array([0.0, 0.0, 1.0])


def _canonical_direction(v: np.ndarray) -> np.ndarray:
    """Unit vector flipped so that the first nonzero of (z, y, x) is positive."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ParameterError("zero direction vector")
    v = v / norm
    for comp in (v[2], v[1], v[0]):
        if comp > 0:
            return v
        if comp < 0:
            return -v
    return v


@dataclass(frozen=True)
class PlaneModel:
    """Plane {p : normal . p = offset}, normal unit with z >= 0."""

    normal: tuple
    offset: float

    @classmethod
    def from_normal_offset(cls, normal, offset) -> "PlaneModel":
        n = np.asarray(normal, dtype=np.float64)
        canon = _canonical_direction(n)
        if np.dot(canon, n) < 0:
            offset = -offset
        offset = offset / np.linalg.norm(n)
        return cls(tuple(canon), float(offset))

    @property
    def normal_array(self) -> np.ndarray:
        return np.asarray(self.normal)

    def signed_distance(self, xyz) -> np.ndarray:
        return np.asarray(xyz) @ self.normal_array - self.offset

    def to_json_dict(self) -> dict:
        return {"normal": list(self.normal), "offset": self.offset}

    @classmethod
    def from_json_dict(cls, d) -> "PlaneModel":
        return cls.from_normal_offset(d["normal"], d["offset"])


@dataclass(frozen=True)
class CylinderModel:
    """Infinite cylinder: point on axis, unit axis direction (z >= 0), radius."""

    axis_point: tuple
    axis_dir: tuple
    radius: float

    @classmethod
    def make(cls, axis_point, axis_dir, radius) -> "CylinderModel":
        if radius <= 0:
            raise ParameterError("cylinder radius must be positive")
        return cls(tuple(np.asarray(axis_point, dtype=np.float64)),
                   tuple(_canonical_direction(axis_dir)), float(radius))

    def axis_distance(self, xyz) -> np.ndarray:
        """Distance from point(s) to the axis line."""
        p = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
        rel = p - np.asarray(self.axis_point)
        a = np.asarray(self.axis_dir)
        along = rel @ a
        perp = rel - np.outer(along, a)
        d = np.linalg.norm(perp, axis=1)
        return d if np.asarray(xyz).ndim == 2 else float(d[0])

    def surface_distance(self, xyz):
        """Unsigned distance to the infinite cylinder surface."""
        return np.abs(self.axis_distance(xyz) - self.radius)

    def scaled(self, s: float) -> "CylinderModel":
        return CylinderModel.make(np.asarray(self.axis_point) * s,
                                  self.axis_dir, self.radius * s)

    def to_json_dict(self) -> dict:
        return {"axis_point": list(self.axis_point),
                "axis_dir": list(self.axis_dir),
                "radius": self.radius}

    @classmethod
    def from_json_dict(cls, d) -> "CylinderModel":
        return cls.make(d["axis_point"], d["axis_dir"], d["radius"])


@dataclass(frozen=True)
class RansacParams:
    """Consensus-fit controls. The seed fixes the hypothesis sequence."""

    distance_threshold: float = 0.010
    max_iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.distance_threshold <= 0:
            raise ParameterError("distance_threshold must be positive")
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be >= 1")


@dataclass(frozen=True)
class RigidTransform:
    """p' = rotation @ p + translation."""

    rotation: tuple      # 3x3 nested tuples
    translation: tuple

    @classmethod
    def make(cls, rotation, translation) -> "RigidTransform":
        r = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(translation, dtype=np.float64).reshape(3)
        return cls(tuple(map(tuple, r)), tuple(t))

    @property
    def rotation_array(self) -> np.ndarray:
        return np.asarray(self.rotation)

    @property
    def translation_array(self) -> np.ndarray:
        return np.asarray(self.translation)

    def apply(self, xyz) -> np.ndarray:
        return np.asarray(xyz) @ self.rotation_array.T + self.translation_array

    def to_json_dict(self) -> dict:
        return {"rotation": [list(r) for r in self.rotation],
                "translation": list(self.translation)}


def point_cylinder_distance(p, cyl: CylinderModel) -> float:
    """Unsigned distance from a point to the infinite cylinder surface."""
    arr = p.as_array() if hasattr(p, "as_array") else np.asarray(p, dtype=np.float64)
    return float(cyl.surface_distance(arr.reshape(1, 3))[0])


def ransac_plane(cloud: PointCloud, params: RansacParams):
    """Largest-consensus plane over 3-point hypotheses.

    Returns (PlaneModel, inlier row indices). The winning hypothesis is
    refined by a least-squares fit over its inliers and the inlier set is
    recomputed under the refined model. Deterministic for a fixed seed:
    ties in inlier count keep the earlier hypothesis.
    """
    xyz = cloud.xyz
    n = len(cloud)
    if n < 3:
        raise FitError("plane fit needs at least 3 points")

    rng = np.random.default_rng(params.seed)
    samples = rng.integers(0, n, size=(params.max_iterations, 3))
    best_count = 0
    best_normal = None
    best_offset = 0.0

    for i, j, k in samples:
        if i == j or j == k or i == k:
            continue
        p0, p1, p2 = xyz[i], xyz[j], xyz[k]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal = normal / norm
        offset = normal @ p0
        count = int(np.count_nonzero(np.abs(xyz @ normal - offset)
                                     <= params.distance_threshold))
        if count > best_count:
            best_count = count
            best_normal, best_offset = normal, offset

    if best_normal is None:
        raise FitError("all plane hypotheses degenerate")

    inliers = np.flatnonzero(np.abs(xyz @ best_normal - best_offset)
                             <= params.distance_threshold)
    model = fit_plane_least_squares(xyz[inliers])
    inliers = np.flatnonzero(np.abs(model.signed_distance(xyz))
                             <= params.distance_threshold)
    return model, inliers


def fit_plane_least_squares(xyz: np.ndarray) -> PlaneModel:
    """Total-least-squares plane through a point set (SVD)."""
    xyz = np.asarray(xyz, dtype=np.float64)
    if xyz.shape[0] < 3:
        raise FitError("plane fit needs at least 3 points")
    centroid = xyz.mean(axis=0)
    _, _, vt = np.linalg.svd(xyz - centroid, full_matrices=False)
    normal = vt[-1]
    return PlaneModel.from_normal_offset(normal, float(normal @ centroid))


def rotation_to_vertical(normal) -> np.ndarray:
    """Rotation matrix mapping ``normal`` onto +Z (Rodrigues formula)."""
    n = _canonical_direction(normal)
    c = float(np.clip(n @ _Z, -1.0, 1.0))
    axis = np.cross(n, _Z)
    s = np.linalg.norm(axis)
    if s < 1e-15:
        return np.eye(3)
    axis = axis / s
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def align_to_ground(cloud: PointCloud, plane: PlaneModel):
    """Rotate the cloud so the ground plane becomes z = 0.

    Returns (aligned cloud, RigidTransform). The aligned cloud carries the
    scalar field "ground_dist" holding each point's height above ground
    (its z coordinate after the transform).
    """
    rot = rotation_to_vertical(plane.normal_array)
    translation = np.array([0.0, 0.0, -plane.offset])
    transform = RigidTransform.make(rot, translation)

    new_xyz = transform.apply(cloud.xyz)
    new_normals = cloud.normals @ rot.T if cloud.normals is not None else None
    aligned = cloud.with_coordinates(new_xyz, normals=new_normals)
    return aligned.with_field("ground_dist", new_xyz[:, 2]), transform


def _axis_from_tilt(tx: float, ty: float) -> np.ndarray:
    """Unit axis tilted from vertical by angles tx (about X) and ty (about Y)."""
    cx, sx = np.cos(tx), np.sin(tx)
    cy, sy = np.cos(ty), np.sin(ty)
    # Ry(ty) @ Rx(tx) @ z
    return np.array([sy * cx, -sx, cy * cx])


def _circle_through_three(pts2d: np.ndarray):
    """Center and radius of the circle through three 2D points, or None."""
    (x1, y1), (x2, y2), (x3, y3) = pts2d
    d = 2.0 * (x1 * (y2 - y3) + x2 * (y3 - y1) + x3 * (y1 - y2))
    if abs(d) < 1e-14:
        return None
    q1 = x1 * x1 + y1 * y1
    q2 = x2 * x2 + y2 * y2
    q3 = x3 * x3 + y3 * y3
    cx = (q1 * (y2 - y3) + q2 * (y3 - y1) + q3 * (y1 - y2)) / d
    cy = (q1 * (x3 - x2) + q2 * (x1 - x3) + q3 * (x2 - x1)) / d
    r = float(np.hypot(x1 - cx, y1 - cy))
    return np.array([cx, cy]), r


def fit_trunk_cylinder(cloud: PointCloud, params: RansacParams = None,
                       z_range=(0.2, 1.2), max_radius: float = 1.0,
                       min_inliers: int = 10) -> CylinderModel:
    """RANSAC cylinder fit to the trunk of a ground-aligned cloud.

    Candidate points are taken from the z slab ``z_range``. Each hypothesis
    draws a near-vertical axis (Gaussian tilt, truncated at 15 degrees) and
    a circle through three projected sample points; inliers are points with
    |axis distance - radius| <= threshold. The best hypothesis is refined by
    nonlinear least squares over axis tilt, center and radius.
    """
    if params is None:
        params = RansacParams(distance_threshold=0.010, max_iterations=2000)
    slab = np.flatnonzero((cloud.xyz[:, 2] >= z_range[0])
                          & (cloud.xyz[:, 2] <= z_range[1]))
    if len(slab) < max(min_inliers, 3):
        raise FitError(
            f"only {len(slab)} points in trunk slab z={z_range}")
    pts = cloud.xyz[slab]
    z_mid = float(pts[:, 2].mean())

    rng = np.random.default_rng(params.seed)
    max_tilt = np.deg2rad(15.0)
    tilt_sigma = np.deg2rad(5.0)

    best = None          # (count, tx, ty, center2, radius)
    m = len(pts)
    for _ in range(params.max_iterations):
        tx, ty = np.clip(rng.normal(0.0, tilt_sigma, size=2),
                         -max_tilt, max_tilt)
        axis = _axis_from_tilt(tx, ty)
        idx = rng.integers(0, m, size=3)
        if len(set(idx.tolist())) < 3:
            continue
        u, v = _plane_basis(axis)
        proj = pts[idx] @ np.column_stack([u, v])
        circle = _circle_through_three(proj)
        if circle is None:
            continue
        center2, radius = circle
        if radius <= 0 or radius > max_radius:
            continue
        all_proj = pts @ np.column_stack([u, v])
        dist = np.linalg.norm(all_proj - center2, axis=1)
        count = int(np.count_nonzero(np.abs(dist - radius)
                                     <= params.distance_threshold))
        if best is None or count > best[0]:
            best = (count, tx, ty, center2, radius, u, v)

    if best is None or best[0] < min_inliers:
        found = 0 if best is None else best[0]
        raise FitError(f"no cylinder hypothesis reached {min_inliers} "
                       f"inliers (best {found})")

    model = _cylinder_from_hypothesis(best, z_mid)
    # Two refinement rounds: refit on inliers, re-select, refit again.
    for _ in range(2):
        resid = np.abs(model.axis_distance(pts) - model.radius)
        inliers = pts[resid <= params.distance_threshold]
        if len(inliers) < min_inliers:
            break
        model = _refine_cylinder(inliers, model, z_mid)
    return model


def _plane_basis(axis: np.ndarray):
    """Orthonormal (u, v) spanning the plane perpendicular to ``axis``."""
    ref = _Z if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u = u / np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


def _cylinder_from_hypothesis(best, z_mid: float) -> CylinderModel:
    _, tx, ty, center2, radius, u, v = best
    axis = _axis_from_tilt(tx, ty)
    center3 = center2[0] * u + center2[1] * v
    # Slide the axis point to the slab mid-height for a stable parameterization.
    if abs(axis[2]) > 1e-9:
        center3 = center3 + (z_mid - center3[2]) / axis[2] * axis
    return CylinderModel.make(center3, axis, radius)


def _refine_cylinder(pts: np.ndarray, init: CylinderModel,
                     z_mid: float) -> CylinderModel:
    """Least-squares cylinder over (tilt_x, tilt_y, cx, cy, r)."""
    a0 = np.asarray(init.axis_dir)
    tx0 = float(np.arcsin(np.clip(-a0[1], -1, 1)))
    ty0 = float(np.arcsin(np.clip(a0[0] / max(np.cos(tx0), 1e-9), -1, 1)))
    p0 = np.asarray(init.axis_point)
    if abs(a0[2]) > 1e-9:
        p0 = p0 + (z_mid - p0[2]) / a0[2] * a0
    x0 = np.array([tx0, ty0, p0[0], p0[1], init.radius])

    def residuals(x):
        axis = _axis_from_tilt(x[0], x[1])
        anchor = np.array([x[2], x[3], z_mid])
        rel = pts - anchor
        along = rel @ axis
        perp = rel - np.outer(along, axis)
        return np.linalg.norm(perp, axis=1) - x[4]

    sol = least_squares(residuals, x0, method="lm", max_nfev=200)
    tx, ty, cx, cy, r = sol.x
    return CylinderModel.make(np.array([cx, cy, z_mid]),
                              _axis_from_tilt(tx, ty), abs(float(r)))


def scale_by_trunk_circumference(cloud: PointCloud,
                                 measured_circumference: float,
                                 measure_height: float,
                                 fitted: CylinderModel):
    """Uniformly scale the cloud so the fitted trunk matches a tape measure.

    The scale factor is measured_circumference / (2 pi fitted.radius),
    applied about the origin. ``measure_height`` records where the tape
    measurement was taken; a cylinder has constant radius, so it does not
    enter the arithmetic. Returns (scaled cloud, scaled cylinder). A
    "ground_dist" field, being a length, is rescaled too.
    """
    if measured_circumference <= 0:
        raise ParameterError("measured circumference must be positive")
    if measure_height < 0:
        raise ParameterError("measure height must be non-negative")
    if fitted.radius <= 0:
        raise ParameterError("fitted radius must be positive")

    s = measured_circumference / (2.0 * np.pi * fitted.radius)
    scaled = cloud.with_coordinates(cloud.xyz * s)
    if scaled.has_field("ground_dist"):
        scaled = scaled.with_field("ground_dist",
                                   scaled.field("ground_dist") * s)
    return scaled, fitted.scaled(s)
