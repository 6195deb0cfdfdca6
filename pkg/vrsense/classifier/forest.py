# vrsense/classifier/forest.py

"""
Bagged decision-tree ensemble (random forest) written against numpy.

Each tree is grown on a bootstrap sample with Gini splitting and a random
feature subset drawn at every split. Leaves keep the label histogram of the
training samples that reached them; a tree votes for its leaf's majority
label and the forest reports the winning vote share as confidence.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from vrsense.errors import ClassifierError, ModelFileError
from vrsense.session.states import STATE_ORDER, StateLabel

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
N_TREES_RANGE = (5, 300)
MAX_DEPTH_RANGE = (1, 16)
MAX_FEATURES_RANGE = (2, 40)


class FeatureSpec(Enum):
    STATELESS_40 = "STATELESS_40"
    STATEFUL_40_PLUS_NK = "STATEFUL_40_PLUS_NK"
    HOST_LEVEL_16 = "HOST_LEVEL_16"


@dataclass(frozen=True)
class Hyperparams:
    n_trees: int = 50
    max_depth: int = 8
    max_features: int = 10

    def validate(self):
        for name, value, (lo, hi) in (
            ("n_trees", self.n_trees, N_TREES_RANGE),
            ("max_depth", self.max_depth, MAX_DEPTH_RANGE),
            ("max_features", self.max_features, MAX_FEATURES_RANGE),
        ):
            if not lo <= value <= hi:
                raise ClassifierError(f"{name}={value} outside [{lo}, {hi}]", code="BAD_HYPERPARAMS")

    def to_dict(self):
        return {"n_trees": self.n_trees, "max_depth": self.max_depth, "max_features_per_tree": self.max_features}

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["n_trees"]), int(data["max_depth"]),
                   int(data.get("max_features_per_tree", data.get("max_features"))))


@dataclass(frozen=True)
class Prediction:
    label: StateLabel
    confidence: float


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf."""
    feature: List[int] = field(default_factory=list)
    threshold: List[float] = field(default_factory=list)
    left: List[int] = field(default_factory=list)
    right: List[int] = field(default_factory=list)
    counts: List[List[int]] = field(default_factory=list)

    def add_node(self, counts) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.counts.append([int(c) for c in counts])
        return len(self.feature) - 1

    def leaf_for(self, x: Sequence[float]) -> int:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] < self.threshold[node] else self.right[node]
        return node

    def vote(self, x: Sequence[float]) -> int:
        # np.argmax returns the first maximum, i.e. the label earliest in enum order
        return int(np.argmax(self.counts[self.leaf_for(x)]))

    def to_dict(self, node: int = 0) -> Dict:
        if self.feature[node] < 0:
            return {"counts": self.counts[node]}
        return {
            "feature": self.feature[node],
            "threshold": self.threshold[node],
            "counts": self.counts[node],
            "left": self.to_dict(self.left[node]),
            "right": self.to_dict(self.right[node]),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Tree":
        tree = cls()

        def build(entry) -> int:
            index = tree.add_node(entry["counts"])
            if "feature" in entry:
                tree.feature[index] = int(entry["feature"])
                tree.threshold[index] = float(entry["threshold"])
                tree.left[index] = build(entry["left"])
                tree.right[index] = build(entry["right"])
            return index

        build(data)
        return tree


@dataclass
class ForestModel:
    trees: List[Tree]
    n_features: int
    label_space: List[StateLabel]
    hyperparams: Hyperparams
    feature_spec: FeatureSpec = FeatureSpec.STATELESS_40
    past_states: int = 0
    seed: int = 0
    app: Optional[str] = None

    def to_dict(self) -> Dict:
        return {
            "version": MODEL_VERSION,
            "app": self.app,
            "feature_spec": self.feature_spec.value,
            "n_features": self.n_features,
            "label_space": [label.value for label in self.label_space],
            "hyperparams": self.hyperparams.to_dict(),
            "past_states": self.past_states,
            "seed": self.seed,
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ForestModel":
        return cls(
            trees=[Tree.from_dict(t) for t in data["trees"]],
            n_features=int(data["n_features"]),
            label_space=[StateLabel(v) for v in data["label_space"]],
            hyperparams=Hyperparams.from_dict(data["hyperparams"]),
            feature_spec=FeatureSpec(data["feature_spec"]),
            past_states=int(data.get("past_states", 0)),
            seed=int(data.get("seed", 0)),
            app=data.get("app"),
        )


def _gini_split(x: np.ndarray, y: np.ndarray, n_classes: int):
    """Best threshold on one feature: (weighted gini, threshold) or None."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = xs.size
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), ys] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]
    right = left[-1] + onehot[-1] - left
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    gini_left = 1.0 - np.sum((left / n_left[:, None]) ** 2, axis=1)
    gini_right = 1.0 - np.sum((right / n_right[:, None]) ** 2, axis=1)
    cost = (n_left * gini_left + n_right * gini_right) / n
    cost[~valid] = np.inf
    i = int(np.argmin(cost))
    threshold = (xs[i] + xs[i + 1]) / 2.0
    if threshold <= xs[i]:
        threshold = xs[i + 1]
    return float(cost[i]), float(threshold)


def _grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, hp: Hyperparams,
               rng: np.random.Generator) -> Tree:
    tree = Tree()
    n_features = X.shape[1]
    max_features = min(hp.max_features, n_features)
    root = tree.add_node(np.bincount(y, minlength=n_classes))
    stack = [(root, np.arange(y.size), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = tree.counts[node]
        if depth >= hp.max_depth or idx.size < 2 or max(counts) == idx.size:
            continue
        features = rng.choice(n_features, size=max_features, replace=False)
        best = None
        for f in features:
            split = _gini_split(X[idx, f], y[idx], n_classes)
            if split is not None and (best is None or split[0] < best[0]):
                best = (split[0], int(f), split[1])
        if best is None:
            continue
        _, f, threshold = best
        mask = X[idx, f] < threshold
        left_idx, right_idx = idx[mask], idx[~mask]
        tree.feature[node] = f
        tree.threshold[node] = threshold
        tree.left[node] = tree.add_node(np.bincount(y[left_idx], minlength=n_classes))
        tree.right[node] = tree.add_node(np.bincount(y[right_idx], minlength=n_classes))
        stack.append((tree.right[node], right_idx, depth + 1))
        stack.append((tree.left[node], left_idx, depth + 1))
    return tree


def encode_labels(labels, label_space: Sequence[StateLabel]) -> np.ndarray:
    index = {label: i for i, label in enumerate(label_space)}
    encoded = []
    for label in labels:
        label = label if isinstance(label, StateLabel) else StateLabel(label)
        if label not in index:
            raise ClassifierError(f"label {label.value} is outside the label space "
                                  f"{[l.value for l in label_space]}", code="LABEL_OUTSIDE_APP")
        encoded.append(index[label])
    return np.asarray(encoded, dtype=np.int64)


def train_forest(X, labels, hyperparams: Hyperparams, seed: int = 0,
                 label_space: Optional[Sequence[StateLabel]] = None,
                 feature_spec: FeatureSpec = FeatureSpec.STATELESS_40,
                 past_states: int = 0, app: Optional[str] = None) -> ForestModel:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ClassifierError("Cannot train on an empty dataset", code="EMPTY_DATASET")
    labels = [l if isinstance(l, StateLabel) else StateLabel(l) for l in labels]
    if len(labels) != X.shape[0]:
        raise ClassifierError(f"{X.shape[0]} feature rows but {len(labels)} labels", code="FEATURE_DIM_MISMATCH")
    hyperparams.validate()
    if label_space is None:
        label_space = sorted(set(labels), key=STATE_ORDER.get)
    label_space = list(label_space)
    y = encode_labels(labels, label_space)
    if np.unique(y).size == 1:
        logger.warning(f"Training {app or 'forest'} on a single class ({labels[0].value}); model is constant")

    children = np.random.SeedSequence(seed).spawn(hyperparams.n_trees)
    trees = []
    for child in children:
        rng = np.random.default_rng(child)
        sample = rng.integers(0, y.size, size=y.size)
        trees.append(_grow_tree(X[sample], y[sample], len(label_space), hyperparams, rng))
    logger.info(f"Trained {feature_spec.value} forest for {app or 'unnamed app'}: {len(trees)} trees, "
                f"{X.shape[0]} samples, {X.shape[1]} features")
    return ForestModel(trees=trees, n_features=X.shape[1], label_space=label_space, hyperparams=hyperparams,
                       feature_spec=feature_spec, past_states=past_states, seed=seed, app=app)


def tree_votes(model: ForestModel, features: Sequence[float]) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise ClassifierError(f"expected {model.n_features} features, got {x.size}", code="FEATURE_DIM_MISMATCH")
    votes = np.zeros(len(model.label_space), dtype=np.int64)
    for tree in model.trees:
        votes[tree.vote(x)] += 1
    return votes


def predict(model: ForestModel, features: Sequence[float]) -> Prediction:
    votes = tree_votes(model, features)
    winner = int(np.argmax(votes))
    return Prediction(model.label_space[winner], float(votes[winner]) / len(model.trees))


def predict_many(model: ForestModel, X) -> List[Prediction]:
    return [predict(model, row) for row in np.asarray(X, dtype=np.float64)]


def save_forest(model: ForestModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict(), separators=(",", ":")) + "\n")
    logger.info(f"Saved {model.feature_spec.value} model for {model.app} to {path}")
    return path


def load_forest(path) -> ForestModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise ModelFileError(f"Cannot read classifier model {path}: {e}")
    except json.JSONDecodeError as e:
        raise ModelFileError(f"Classifier model {path} is not valid JSON: {e}")
    if not isinstance(data, dict) or data.get("version") != MODEL_VERSION:
        raise ModelFileError(f"Classifier model {path} has an unsupported version", code="SCHEMA_MISMATCH")
    try:
        model = ForestModel.from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError(f"Classifier model {path} is corrupt: {e}")
    for tree in model.trees:
        if any(f >= model.n_features for f in tree.feature):
            raise ModelFileError(f"Classifier model {path} splits on a feature beyond {model.n_features}")
    return model
