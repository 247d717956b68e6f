"""Random forest classifier built from scratch (bootstrap + CART trees).

Each tree is grown greedily on a bootstrap sample: at every node a random
subset of features is scanned, candidate thresholds are the midpoints
between consecutive distinct sorted values, and the split minimizing the
weighted Gini impurity wins. Growth stops at max depth, when a node holds
fewer than min_samples_split samples, or at purity. Prediction averages
the leaf class distributions over all trees; ties break toward the lowest
class index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, integer labels in [0, C) and class names."""

    features: np.ndarray     # (n, d) float64
    labels: np.ndarray       # (n,) int64
    class_names: tuple

    def __post_init__(self):
        object.__setattr__(self, "features",
                           np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels",
                           np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ParameterError("features and labels disagree in length")
        if len(self.labels) < 1:
            raise ParameterError("dataset must hold at least one sample")
        if self.labels.min() < 0 or self.labels.max() >= len(self.class_names):
            raise ParameterError("labels out of range for class names")

    @property
    def n_samples(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


@dataclass(frozen=True)
class ForestParams:
    """Forest hyperparameters. features_per_split None means floor(sqrt(d))."""

    n_trees: int = 200
    max_depth: int = 30
    min_samples_split: int = 10
    features_per_split: int = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_split < 1:
            raise ParameterError("forest parameters must be positive")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ParameterError("features_per_split must be positive")


class DecisionTree:
    """A CART tree stored as flat node arrays.

    ``feature[i] == -1`` marks a leaf; otherwise samples with
    x[feature[i]] <= threshold[i] go to ``left[i]``, the rest to
    ``right[i]``. ``proba[i]`` is the training class distribution at i.
    """

    def __init__(self, feature, threshold, left, right, proba):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.proba = np.asarray(proba, dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while np.any(active):
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active[rows] = self.feature[node[rows]] >= 0
        return self.proba[node]

    def to_json_dict(self) -> dict:
        return {"feature": self.feature.tolist(),
                "threshold": self.threshold.tolist(),
                "left": self.left.tolist(),
                "right": self.right.tolist(),
                "proba": self.proba.tolist()}

    @classmethod
    def from_json_dict(cls, d) -> "DecisionTree":
        return cls(d["feature"], d["threshold"], d["left"], d["right"],
                   d["proba"])


@dataclass
class RandomForest:
    params: ForestParams
    class_names: tuple
    n_features: int
    trees: list = field(default_factory=list)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ParameterError(
                f"expected {self.n_features} features, got {X.shape[1]}")
        acc = np.zeros((len(X), len(self.class_names)))
        for tree in self.trees:
            acc += tree.predict_proba(X)
        return acc / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class labels; ties resolve to the lowest class index."""
        return np.argmax(self.predict_proba(X), axis=1)

    def save(self, path) -> None:
        payload = {
            "params": {
                "n_trees": self.params.n_trees,
                "max_depth": self.params.max_depth,
                "min_samples_split": self.params.min_samples_split,
                "features_per_split": self.params.features_per_split,
                "seed": self.params.seed,
            },
            "class_names": list(self.class_names),
            "n_features": self.n_features,
            "trees": [t.to_json_dict() for t in self.trees],
        }
        with open(path, "w", encoding="ascii") as fh:
            json.dump(payload, fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RandomForest":
        with open(path, "r", encoding="ascii") as fh:
            payload = json.load(fh)
        params = ForestParams(**payload["params"])
        forest = cls(params, tuple(payload["class_names"]),
                     int(payload["n_features"]))
        forest.trees = [DecisionTree.from_json_dict(t)
                        for t in payload["trees"]]
        return forest


def predict(forest: RandomForest, row: np.ndarray):
    """(label, probability vector) for a single feature row."""
    proba = forest.predict_proba(np.asarray(row)[None, :])[0]
    return int(np.argmax(proba)), proba


def split_train_validation(ds: Dataset, train_fraction: float, seed: int):
    """Deterministic stratified split into (train, validation).

    Per-class proportions are preserved within one sample. Every class
    needs at least 2 samples to appear on both sides.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    classes = np.unique(ds.labels)
    sizes = np.array([np.count_nonzero(ds.labels == c) for c in classes])
    if sizes.min() < 2:
        bad = ds.class_names[classes[int(np.argmin(sizes))]]
        raise DataError(f"class {bad!r} has fewer than 2 samples; "
                        "cannot stratify")

    # Largest-remainder allocation: per-class floor shares, then hand the
    # remaining samples to the classes with the biggest fractional parts,
    # so the overall train count matches the fraction exactly.
    exact = train_fraction * sizes
    shares = np.floor(exact).astype(int)
    target = int(np.floor(train_fraction * sizes.sum() + 0.5))
    extras = max(0, min(target - shares.sum(), len(classes)))
    order = np.lexsort((np.arange(len(classes)), -(exact - shares)))
    shares[order[:extras]] += 1
    shares = np.clip(shares, 1, sizes - 1)

    train_rows, val_rows = [], []
    for c, n_train in zip(classes, shares):
        rows = np.flatnonzero(ds.labels == c)
        rows = rows[rng.permutation(len(rows))]
        train_rows.append(rows[:n_train])
        val_rows.append(rows[n_train:])
    train_rows = np.sort(np.concatenate(train_rows))
    val_rows = np.sort(np.concatenate(val_rows))
    return (Dataset(ds.features[train_rows], ds.labels[train_rows],
                    ds.class_names),
            Dataset(ds.features[val_rows], ds.labels[val_rows],
                    ds.class_names))


def train_forest(ds: Dataset, params: ForestParams) -> RandomForest:
    """Train a forest of CART trees on bootstrap samples.

    Per-tree RNG streams derive from the master seed, so results do not
    depend on evaluation order and shorter forests are prefixes of longer
    ones under the same seed.
    """
    d = ds.n_features
    k = params.features_per_split or max(1, int(np.floor(np.sqrt(d))))
    k = min(k, d)
    forest = RandomForest(params, ds.class_names, d)
    seeds = np.random.SeedSequence(params.seed).spawn(params.n_trees)
    for ss in seeds:
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, ds.n_samples, size=ds.n_samples)
        forest.trees.append(
            _grow_tree(ds.features, ds.labels, boot, ds.n_classes,
                       params, k, rng))
    return forest


def _gini_curves(y_sorted: np.ndarray, n_classes: int):
    """Weighted Gini of every prefix/suffix split of a sorted label array.

    Returns an array g of length m-1 where g[i] scores the split placing
    the first i+1 samples left.
    """
    m = len(y_sorted)
    onehot = np.zeros((m, n_classes))
    onehot[np.arange(m), y_sorted] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]          # counts left of split i
    total = left[-1] + onehot[-1]
    right = total[None, :] - left
    nl = np.arange(1, m, dtype=np.float64)
    nr = m - nl
    gini_l = 1.0 - ((left / nl[:, None]) ** 2).sum(axis=1)
    gini_r = 1.0 - ((right / nr[:, None]) ** 2).sum(axis=1)
    return (nl * gini_l + nr * gini_r) / m


def _grow_tree(X, y, boot, n_classes, params: ForestParams, k: int,
               rng) -> DecisionTree:
    feature, threshold, left, right, proba = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        proba.append(None)
        return len(feature) - 1

    def leaf_distribution(rows):
        counts = np.bincount(y[rows], minlength=n_classes)
        return counts / counts.sum()

    root = new_node()
    stack = [(root, boot, 0)]
    while stack:
        node, rows, depth = stack.pop()
        labels = y[rows]
        pure = labels.min() == labels.max()
        if (depth >= params.max_depth or pure
                or len(rows) < params.min_samples_split):
            proba[node] = leaf_distribution(rows)
            continue

        cand = rng.choice(X.shape[1], size=k, replace=False)
        best = None      # (score, feature, threshold)
        for f in np.sort(cand):
            vals = X[rows, f]
            order = np.argsort(vals, kind="stable")
            v_sorted = vals[order]
            distinct = v_sorted[1:] != v_sorted[:-1]
            if not np.any(distinct):
                continue
            scores = _gini_curves(labels[order], n_classes)
            pos = np.flatnonzero(distinct)
            p = pos[np.argmin(scores[pos])]
            score = scores[p]
            # ties keep the earlier (lowest-index) feature
            if best is None or score < best[0]:
                thr = 0.5 * (v_sorted[p] + v_sorted[p + 1])
                best = (score, int(f), float(thr))

        if best is None:
            proba[node] = leaf_distribution(rows)
            continue

        _, f, thr = best
        go_left = X[rows, f] <= thr
        l_node, r_node = new_node(), new_node()
        feature[node] = f
        threshold[node] = thr
        left[node] = l_node
        right[node] = r_node
        # push right first so left subtrees are built first (stable layout)
        stack.append((r_node, rows[~go_left], depth + 1))
        stack.append((l_node, rows[go_left], depth + 1))

    proba = [p if p is not None else np.zeros(n_classes) for p in proba]
    return DecisionTree(feature, threshold, left, right, np.vstack(proba))


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row = reference class, column = predicted class."""

    counts: np.ndarray
    class_names: tuple

    @classmethod
    def from_labels(cls, reference, predicted, class_names) -> "ConfusionMatrix":
        reference = np.asarray(reference, dtype=np.int64)
        predicted = np.asarray(predicted, dtype=np.int64)
        if reference.shape != predicted.shape:
            raise DataError("reference/predicted length mismatch")
        c = len(class_names)
        counts = np.bincount(reference * c + predicted,
                             minlength=c * c).reshape(c, c)
        return cls(counts, tuple(class_names))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def overall_accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def producers_accuracy(self) -> np.ndarray:
        """Recall per reference class; NaN where the class has no samples."""
        row = self.counts.sum(axis=1).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(row > 0, np.diag(self.counts) / row, np.nan)

    def users_accuracy(self) -> np.ndarray:
        """Precision per predicted class; NaN where nothing was predicted."""
        col = self.counts.sum(axis=0).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(col > 0, np.diag(self.counts) / col, np.nan)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("reference\\predicted," + ",".join(self.class_names) + "\n")
            for name, row in zip(self.class_names, self.counts):
                fh.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")

    def to_text(self) -> str:
        width = max(len(n) for n in self.class_names) + 2
        lines = [" " * width + "".join(f"{n:>{width}}" for n in self.class_names)]
        for name, row in zip(self.class_names, self.counts):
            lines.append(f"{name:>{width}}"
                         + "".join(f"{int(v):>{width}}" for v in row))
        return "\n".join(lines)


def evaluate(forest: RandomForest, ds: Dataset):
    """(ConfusionMatrix, OA, PA array, UA array) on a labeled dataset."""
    pred = forest.predict(ds.features)
    cm = ConfusionMatrix.from_labels(ds.labels, pred, ds.class_names)
    return cm, cm.overall_accuracy(), cm.producers_accuracy(), cm.users_accuracy()
