"""The three segmentation stages and their feature builders.

Stage 1 separates ground from tree on (height above ground, verticality),
stage 2 strips sky-colored noise on the CIELAB values, and stage 3 splits
the remaining structure into major and minor branches on the twenty
geometric features. Each stage is one random forest; models can be
trained from any cloud carrying a ground-truth "class" field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import PointCloud, SpatialIndex
from .color import rgb_array_to_cielab
from .errors import DataError
from .features import compute_all_features, verticality_feature
from .fitting import CylinderModel
from .forest import (ConfusionMatrix, Dataset, ForestParams, RandomForest,
                     evaluate, split_train_validation, train_forest)

STAGES = ("ground", "noise", "branches")

STAGE_CLASSES = {
    "ground": ("ground", "tree"),
    "noise": ("noise", "tree"),
    "branches": ("minor", "major"),
}

# codes of the combined per-point "class" field
CLASS_GROUND, CLASS_NOISE, CLASS_MINOR, CLASS_MAJOR = range(4)
CLASS_FIELD_NAMES = ("ground", "noise", "minor", "major")


def stage_features(stage: str, cloud: PointCloud,
                   trunk: Optional[CylinderModel] = None,
                   index: Optional[SpatialIndex] = None,
                   workers: int = 1) -> np.ndarray:
    """Feature matrix of ``stage`` for every point of ``cloud``."""
    if stage == "ground":
        if not cloud.has_field("ground_dist"):
            raise DataError("stage 'ground' needs the ground_dist field "
                            "(align the cloud first)")
        vert = verticality_feature(cloud, 0.15, index=index, workers=workers)
        return np.column_stack([cloud.field("ground_dist"), vert])
    if stage == "noise":
        if cloud.colors is None:
            raise DataError("stage 'noise' needs point colors")
        return rgb_array_to_cielab(cloud.colors)
    if stage == "branches":
        if trunk is None:
            raise DataError("stage 'branches' needs the trunk cylinder")
        return compute_all_features(cloud, trunk, index=index,
                                    workers=workers)
    raise DataError(f"unknown stage {stage!r}")


def stage_labels(stage: str, classes: np.ndarray):
    """(rows, binary labels) for training ``stage`` from a class field.

    Returns the row subset the stage sees during inference and the 0/1
    labels matching STAGE_CLASSES.
    """
    classes = np.asarray(classes)
    if stage == "ground":
        rows = np.arange(len(classes))
        labels = (classes != CLASS_GROUND).astype(np.int64)
    elif stage == "noise":
        rows = np.flatnonzero(classes != CLASS_GROUND)
        labels = (classes[rows] != CLASS_NOISE).astype(np.int64)
    elif stage == "branches":
        rows = np.flatnonzero((classes == CLASS_MINOR)
                              | (classes == CLASS_MAJOR))
        labels = (classes[rows] == CLASS_MAJOR).astype(np.int64)
    else:
        raise DataError(f"unknown stage {stage!r}")
    if len(rows) == 0:
        raise DataError(f"no training points for stage {stage!r}")
    return rows, labels


@dataclass
class StageReport:
    stage: str
    confusion: ConfusionMatrix
    overall_accuracy: float
    n_train: int
    n_validation: int

    def to_json_dict(self) -> dict:
        pa = self.confusion.producers_accuracy()
        ua = self.confusion.users_accuracy()
        return {
            "stage": self.stage,
            "overall_accuracy": self.overall_accuracy,
            "class_names": list(self.confusion.class_names),
            "confusion": self.confusion.counts.tolist(),
            "producers_accuracy": [None if np.isnan(v) else float(v)
                                   for v in pa],
            "users_accuracy": [None if np.isnan(v) else float(v)
                               for v in ua],
            "n_train": self.n_train,
            "n_validation": self.n_validation,
        }


def cap_stratified(X: np.ndarray, y: np.ndarray, cap: int, seed: int):
    """Deterministic per-class proportional subsample down to ``cap``."""
    n = len(y)
    if n <= cap:
        return X, y
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(y):
        rows = np.flatnonzero(y == c)
        quota = max(1, int(round(cap * len(rows) / n)))
        rows = rows[rng.permutation(len(rows))][:quota]
        keep.append(rows)
    keep = np.sort(np.concatenate(keep))
    return X[keep], y[keep]


def train_stage(stage: str, cloud: PointCloud, params: ForestParams,
                trunk: Optional[CylinderModel] = None,
                train_fraction: float = 0.75,
                max_train_samples: int = 20000,
                workers: int = 1):
    """Train one stage forest from a cloud with a ground-truth class field.

    Returns (RandomForest, StageReport). The validation split follows the
    published protocol; the training set is capped (stratified) to keep
    desk-scale runtimes.
    """
    if not cloud.has_field("class"):
        raise DataError("training cloud lacks the 'class' field")
    rows, labels = stage_labels(stage, cloud.field("class"))
    sub = cloud.select(rows)
    X = stage_features(stage, sub, trunk=trunk, workers=workers)
    X, labels = cap_stratified(X, labels, max_train_samples, params.seed)

    ds = Dataset(X, labels, STAGE_CLASSES[stage])
    train, val = split_train_validation(ds, train_fraction, params.seed)
    forest = train_forest(train, params)
    cm, oa, _, _ = evaluate(forest, val)
    report = StageReport(stage, cm, oa, train.n_samples, val.n_samples)
    return forest, report


@dataclass
class StageModels:
    """The three trained stage forests."""

    ground: RandomForest
    noise: RandomForest
    branches: RandomForest

    def get(self, stage: str) -> RandomForest:
        if stage not in STAGES:
            raise DataError(f"unknown stage {stage!r}")
        return getattr(self, stage)

    def save(self, paths: dict) -> None:
        for stage in STAGES:
            getattr(self, stage).save(paths[stage])

    @classmethod
    def load(cls, paths: dict) -> "StageModels":
        return cls(**{stage: RandomForest.load(paths[stage])
                      for stage in STAGES})


def classify_stage(stage: str, cloud: PointCloud, forest: RandomForest,
                   trunk: Optional[CylinderModel] = None,
                   workers: int = 1) -> np.ndarray:
    """Predicted stage labels (0/1 per STAGE_CLASSES) for every point."""
    X = stage_features(stage, cloud, trunk=trunk, workers=workers)
    return forest.predict(X)
