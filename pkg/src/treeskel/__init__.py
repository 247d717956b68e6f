"""treeskel: skeleton graph extraction for meadow-orchard tree point clouds.

The package turns a pre-registered photogrammetric point cloud of a
stand-alone tree into a hierarchical skeleton graph: preprocessing and
three-stage random-forest segmentation, trunk cylinder fitting and slicing,
k-means branch clustering, shortest-path graph assembly, and quantitative
evaluation against a reference graph. A deterministic synthetic-tree
generator provides ground truth for end-to-end verification.
"""

from .cloud import Point3, PointCloud, SpatialIndex, VoxelGrid, voxelize
from .color import rgb_array_to_cielab, rgb_to_cielab
from .errors import (DataError, FitError, ParameterError, ParseError,
                     TreeSkelError)
from .filters import (connected_components, keep_largest_component,
                      sor_filter, subsample_min_distance)
from .fitting import (CylinderModel, PlaneModel, RansacParams, RigidTransform,
                      align_to_ground, fit_trunk_cylinder,
                      point_cylinder_distance, ransac_plane,
                      scale_by_trunk_circumference)
from .io import load_cloud, save_cloud

__version__ = "0.1.0"

__all__ = [
    "Point3", "PointCloud", "SpatialIndex", "VoxelGrid", "voxelize",
    "rgb_to_cielab", "rgb_array_to_cielab",
    "TreeSkelError", "ParameterError", "ParseError", "DataError", "FitError",
    "subsample_min_distance", "sor_filter", "connected_components",
    "keep_largest_component",
    "PlaneModel", "CylinderModel", "RansacParams", "RigidTransform",
    "ransac_plane", "align_to_ground", "fit_trunk_cylinder",
    "point_cylinder_distance", "scale_by_trunk_circumference",
    "load_cloud", "save_cloud",
]
