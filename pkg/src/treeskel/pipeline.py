"""End-to-end orchestration: configuration, preprocessing, skeleton runs.

The working universe is the subsampled, ground-aligned cloud; every later
stage only removes points from it, and per-point results are reported
over it (points removed along the way keep the Rest label). Source ids
survive all stages, so outputs can be joined back to the raw input.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .cloud import PointCloud
from .errors import DataError, FitError
from .filters import (keep_largest_component, sor_filter,
                      subsample_min_distance)
from .fitting import (CylinderModel, PlaneModel, RansacParams,
                      RigidTransform, align_to_ground, fit_trunk_cylinder,
                      ransac_plane)
from .forest import ForestParams
from .segmentation import (CLASS_GROUND, CLASS_MAJOR, CLASS_MINOR,
                           CLASS_NOISE, STAGES, StageModels, classify_stage,
                           train_stage)
from .skeleton import BranchLabeling, SkeletonGraph, skeletonize


@dataclass
class PipelineConfig:
    """Every tunable of the pipeline; defaults follow the published setup
    (5 mm subsampling, 5 cm trunk membership, 1 cm voxels with 2 clusters
    per 100, 30 mm edge pruning, 50 mm matching, forests of 200 trees,
    depth 30, minimum split 10, 75% training share)."""

    subsample_mm: float = 5.0
    sor_k: int = 6
    sor_nsigma: float = 1.0
    link_radius_mm: float = 10.0
    trunk_dist_cm: float = 5.0
    voxel_cm: float = 1.0
    clusters_per_100_voxels: float = 2.0
    edge_max_mm: float = 30.0
    match_radius_mm: float = 50.0
    lb_min_fraction: float = 0.05
    n_trees: int = 200
    max_depth: int = 30
    min_samples_split: int = 10
    train_fraction: float = 0.75
    max_train_samples: int = 20000
    plane_threshold_mm: float = 10.0
    plane_iterations: int = 1000
    cylinder_threshold_mm: float = 10.0
    cylinder_iterations: int = 2000
    trunk_fit_zmin: float = 0.2
    trunk_fit_zmax: float = 1.2
    kmeans_restarts: int = 5
    seed: int = 0
    threads: int = 1

    # -- unit helpers ----------------------------------------------------
    @property
    def subsample_m(self) -> float:
        return self.subsample_mm / 1000.0

    @property
    def link_radius_m(self) -> float:
        return self.link_radius_mm / 1000.0

    @property
    def trunk_dist_m(self) -> float:
        return self.trunk_dist_cm / 100.0

    @property
    def voxel_m(self) -> float:
        return self.voxel_cm / 100.0

    @property
    def edge_max_m(self) -> float:
        return self.edge_max_mm / 1000.0

    @property
    def match_radius_m(self) -> float:
        return self.match_radius_mm / 1000.0

    def plane_ransac(self) -> RansacParams:
        return RansacParams(self.plane_threshold_mm / 1000.0,
                            self.plane_iterations, seed=self.seed)

    def cylinder_ransac(self) -> RansacParams:
        return RansacParams(self.cylinder_threshold_mm / 1000.0,
                            self.cylinder_iterations, seed=self.seed + 1)

    def forest_params(self, stage_index: int) -> ForestParams:
        return ForestParams(self.n_trees, self.max_depth,
                            self.min_samples_split,
                            seed=self.seed + 100 + stage_index)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(asdict(self), fh, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="ascii") as fh:
            data = json.load(fh)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class PreprocessResult:
    """Classified working cloud plus the fitted geometry.

    ``working`` is the subsampled, aligned cloud with a "class" field
    (0 ground, 1 noise, 2 minor, 3 major); ``tree_rows`` are the rows of
    the major structure that feeds skeletonization. Points removed by the
    outlier filter or the connectivity check count as noise.
    """

    working: PointCloud
    plane: PlaneModel
    transform: RigidTransform
    trunk: CylinderModel
    tree_rows: np.ndarray

    @property
    def tree_cloud(self) -> PointCloud:
        return self.working.select(self.tree_rows)


def train_models(cloud: PointCloud, cfg: PipelineConfig):
    """Train all three stage forests from a cloud with a "class" field.

    The cloud goes through the same subsample + align steps as inference
    so densities and heights match. Returns (StageModels, reports dict).
    """
    sub = subsample_min_distance(cloud, cfg.subsample_m)
    plane, _ = ransac_plane(sub, cfg.plane_ransac())
    aligned, _ = align_to_ground(sub, plane)

    trunk = None
    forests, reports = {}, {}
    for i, stage in enumerate(STAGES):
        if stage == "branches":
            # f20 needs the trunk; fit it on the true tree structure
            classes = aligned.field("class")
            tree = aligned.select((classes == CLASS_MINOR)
                                  | (classes == CLASS_MAJOR))
            trunk = fit_trunk_cylinder(
                tree, cfg.cylinder_ransac(),
                z_range=(cfg.trunk_fit_zmin, cfg.trunk_fit_zmax))
        forests[stage], reports[stage] = train_stage(
            stage, aligned, cfg.forest_params(i), trunk=trunk,
            train_fraction=cfg.train_fraction,
            max_train_samples=cfg.max_train_samples, workers=cfg.threads)
    return StageModels(**forests), reports


def preprocess(cloud: PointCloud, cfg: PipelineConfig,
               models: StageModels) -> PreprocessResult:
    """Subsample, align, and run the three-stage segmentation.

    Order: subsample, ground alignment, ground/tree split, noise/tree
    split, statistical outlier removal, largest connected component,
    trunk cylinder fit, major/minor split.
    """
    sub = subsample_min_distance(cloud, cfg.subsample_m)
    plane, _ = ransac_plane(sub, cfg.plane_ransac())
    aligned, transform = align_to_ground(sub, plane)
    n = len(aligned)
    classes = np.full(n, CLASS_NOISE, dtype=np.int64)

    # stage 1: ground vs tree
    pred1 = classify_stage("ground", aligned, models.ground,
                           workers=cfg.threads)
    classes[pred1 == 0] = CLASS_GROUND
    rows = np.flatnonzero(pred1 == 1)

    # stage 2: noise vs tree, on the tree side only
    if len(rows):
        pred2 = classify_stage("noise", aligned.select(rows), models.noise,
                               workers=cfg.threads)
        rows = rows[pred2 == 1]

    # outlier and connectivity cleanup; removed points count as noise
    if len(rows) > cfg.sor_k:
        kept = sor_filter(aligned.select(rows), cfg.sor_k, cfg.sor_nsigma)
        rows = rows[np.isin(aligned.source_id[rows], kept.source_id)]
    if len(rows):
        kept = keep_largest_component(aligned.select(rows), cfg.link_radius_m)
        rows = rows[np.isin(aligned.source_id[rows], kept.source_id)]
    if len(rows) < 3:
        raise FitError("preprocessing removed almost every point")

    tree = aligned.select(rows)
    trunk = fit_trunk_cylinder(tree, cfg.cylinder_ransac(),
                               z_range=(cfg.trunk_fit_zmin,
                                        cfg.trunk_fit_zmax))

    # stage 3: major vs minor branches
    pred3 = classify_stage("branches", tree, models.branches, trunk=trunk,
                           workers=cfg.threads)
    classes[rows[pred3 == 0]] = CLASS_MINOR
    classes[rows[pred3 == 1]] = CLASS_MAJOR
    working = aligned.with_field("class", classes)
    return PreprocessResult(working, plane, transform, trunk,
                            rows[pred3 == 1])


@dataclass
class PipelineResult:
    preprocess: PreprocessResult
    graph: SkeletonGraph
    tree_labeling: BranchLabeling      # over the tree cloud rows
    working_labeling: BranchLabeling   # over the full working cloud

    @property
    def labeled_working_cloud(self) -> PointCloud:
        return self.preprocess.working.with_field(
            "branch_id", self.working_labeling.codes)


def run_skeletonization(pre: PreprocessResult,
                        cfg: PipelineConfig) -> PipelineResult:
    """Skeletonize the preprocessed tree and label the working cloud."""
    graph, labeling = skeletonize(
        pre.tree_cloud, pre.trunk, seed=cfg.seed,
        trunk_dist=cfg.trunk_dist_m, voxel_size=cfg.voxel_m,
        per_100_voxels=cfg.clusters_per_100_voxels,
        edge_max=cfg.edge_max_m, lb_min_fraction=cfg.lb_min_fraction,
        kmeans_restarts=cfg.kmeans_restarts)
    codes = np.full(len(pre.working), -1, dtype=np.int64)
    codes[pre.tree_rows] = labeling.codes
    working_labeling = BranchLabeling(codes, labeling.n_leading)
    return PipelineResult(pre, graph, labeling, working_labeling)


def run_pipeline(cloud: PointCloud, cfg: PipelineConfig,
                 models: StageModels) -> PipelineResult:
    """Full preprocessing plus skeletonization."""
    return run_skeletonization(preprocess(cloud, cfg, models), cfg)


def restrict_to_universe(reference_labeling: BranchLabeling,
                         reference_ids: np.ndarray,
                         target_ids: np.ndarray) -> BranchLabeling:
    """Reference labels re-indexed onto the target's source-id universe."""
    order = np.argsort(reference_ids)
    pos = np.searchsorted(reference_ids, target_ids, sorter=order)
    if np.any(pos >= len(reference_ids)):
        raise DataError("target ids missing from the reference universe")
    rows = order[np.minimum(pos, len(reference_ids) - 1)]
    if not np.array_equal(reference_ids[rows], target_ids):
        raise DataError("target ids missing from the reference universe")
    return BranchLabeling(reference_labeling.codes[rows],
                          reference_labeling.n_leading)
