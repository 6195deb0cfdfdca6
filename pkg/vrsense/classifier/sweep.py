# vrsense/classifier/sweep.py

"""
Stratified k-fold grid search over forest hyperparameters.

Each cell is scored by its per-class TP and FP rates pooled over all folds.
The best cell has the highest mean TP, then the lowest mean FP, then the
smallest model.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from vrsense.classifier.forest import FeatureSpec, Hyperparams, encode_labels, predict, train_forest
from vrsense.errors import ClassifierError
from vrsense.session.states import STATE_ORDER, StateLabel
from vrsense.utils.helpers import confusion_matrix, format_tp_fp, per_class_rates

logger = logging.getLogger(__name__)

DEFAULT_K_FOLDS = 10
DEFAULT_GRID = {
    "n_trees": [5, 20, 50, 100],
    "max_depth": [1, 4, 8, 16],
    "max_features": [2, 10, 20, 40],
}

Grid = Union[Mapping[str, Sequence[int]], Iterable[Hyperparams]]


@dataclass
class SweepCell:
    hyperparams: Hyperparams
    per_class: Dict[StateLabel, Tuple[float, float]]

    @property
    def mean_tp(self) -> float:
        return float(np.mean([tp for tp, _ in self.per_class.values()]))

    @property
    def mean_fp(self) -> float:
        return float(np.mean([fp for _, fp in self.per_class.values()]))

    def rank_key(self):
        hp = self.hyperparams
        return (-self.mean_tp, self.mean_fp, hp.n_trees, hp.max_depth, hp.max_features)

    def to_row(self) -> Dict:
        row = {"n_trees": self.hyperparams.n_trees, "max_depth": self.hyperparams.max_depth,
               "max_features": self.hyperparams.max_features}
        for label, (tp, fp) in self.per_class.items():
            row[label.value] = format_tp_fp(tp, fp)
        row["mean"] = format_tp_fp(self.mean_tp, self.mean_fp)
        return row


@dataclass
class SweepResult:
    best: Hyperparams
    cells: List[SweepCell]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([cell.to_row() for cell in self.cells])


def expand_grid(grid: Grid) -> List[Hyperparams]:
    if isinstance(grid, Mapping):
        keys = ("n_trees", "max_depth", "max_features")
        missing = [k for k in keys if k not in grid]
        if missing:
            raise ClassifierError(f"Hyperparameter grid is missing {missing}", code="BAD_HYPERPARAMS")
        cells = [Hyperparams(int(t), int(d), int(f)) for t, d, f in itertools.product(*(grid[k] for k in keys))]
    else:
        cells = list(grid)
    if not cells:
        raise ClassifierError("Hyperparameter grid is empty", code="BAD_HYPERPARAMS")
    for cell in cells:
        cell.validate()
    return cells


def stratified_folds(y: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Fold id per sample; each class is shuffled then dealt round-robin over the folds."""
    if k < 2:
        raise ClassifierError(f"k_folds must be at least 2, got {k}", code="INSUFFICIENT_SAMPLES")
    rng = np.random.default_rng(seed)
    folds = np.empty(y.size, dtype=np.int64)
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        if members.size < k:
            raise ClassifierError(f"class {c} has {members.size} samples, fewer than {k} folds",
                                  code="INSUFFICIENT_SAMPLES")
        rng.shuffle(members)
        folds[members] = np.arange(members.size) % k
    return folds


def cross_validate(X: np.ndarray, y: np.ndarray, label_space: List[StateLabel], hyperparams: Hyperparams,
                   folds: np.ndarray, seed: int = 0,
                   feature_spec: FeatureSpec = FeatureSpec.STATELESS_40) -> np.ndarray:
    """Pooled confusion matrix of one hyperparameter cell over all folds."""
    matrix = np.zeros((len(label_space), len(label_space)), dtype=np.int64)
    for fold in np.unique(folds):
        train, test = folds != fold, folds == fold
        model = train_forest(X[train], [label_space[i] for i in y[train]], hyperparams, seed=seed,
                             label_space=label_space, feature_spec=feature_spec)
        predicted = [label_space.index(predict(model, row).label) for row in X[test]]
        matrix += confusion_matrix(y[test], predicted, len(label_space))
    return matrix


def sweep_hyperparams(X, labels, grid: Grid = None, k_folds: int = DEFAULT_K_FOLDS, seed: int = 0,
                      label_space: Optional[Sequence[StateLabel]] = None,
                      feature_spec: FeatureSpec = FeatureSpec.STATELESS_40) -> SweepResult:
    X = np.asarray(X, dtype=np.float64)
    labels = [l if isinstance(l, StateLabel) else StateLabel(l) for l in labels]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ClassifierError("Cannot sweep an empty dataset", code="EMPTY_DATASET")
    if label_space is None:
        label_space = sorted(set(labels), key=STATE_ORDER.get)
    label_space = list(label_space)
    y = encode_labels(labels, label_space)
    cells_hp = expand_grid(grid if grid is not None else DEFAULT_GRID)
    folds = stratified_folds(y, k_folds, seed)
    present = [i for i in range(len(label_space)) if np.any(y == i)]

    cells = []
    for hp in cells_hp:
        matrix = cross_validate(X, y, label_space, hp, folds, seed, feature_spec)
        rates = per_class_rates(matrix)
        cell = SweepCell(hp, {label_space[i]: rates[i] for i in present})
        cells.append(cell)
        logger.debug(f"Sweep cell {hp}: mean TP {cell.mean_tp:.4f}, mean FP {cell.mean_fp:.4f}")

    best = min(cells, key=SweepCell.rank_key)
    logger.info(f"Best sweep cell: {best.hyperparams} (mean TP|FP {format_tp_fp(best.mean_tp, best.mean_fp)})")
    return SweepResult(best.hyperparams, cells)
