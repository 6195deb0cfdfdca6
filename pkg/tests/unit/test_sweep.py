import numpy as np
import pytest

from vrsense.classifier.forest import Hyperparams
from vrsense.classifier.sweep import expand_grid, stratified_folds, sweep_hyperparams
from vrsense.errors import ClassifierError
from vrsense.session.states import StateLabel


def _xor(n_per_corner=20, seed=0):
    rng = np.random.default_rng(seed)
    X, labels = [], []
    for (cx, cy), label in (((0, 0), StateLabel.HS), ((1, 1), StateLabel.HS),
                            ((0, 1), StateLabel.MH), ((1, 0), StateLabel.MH)):
        X.append(np.column_stack([rng.normal(cx, 0.05, n_per_corner), rng.normal(cy, 0.05, n_per_corner)]))
        labels += [label] * n_per_corner
    return np.vstack(X), labels


def test_deeper_trees_win_on_xor():
    X, labels = _xor()
    result = sweep_hyperparams(X, labels, {"n_trees": [20], "max_depth": [1, 8], "max_features": [2]},
                               k_folds=5, seed=0)
    assert result.best == Hyperparams(20, 8, 2)
    deep = next(c for c in result.cells if c.hyperparams.max_depth == 8)
    shallow = next(c for c in result.cells if c.hyperparams.max_depth == 1)
    assert deep.mean_tp > 0.95
    assert shallow.mean_tp < deep.mean_tp

    frame = result.to_frame()
    assert len(frame) == 2
    assert set(frame.columns) >= {"n_trees", "max_depth", "max_features", "HS", "MH", "mean"}
    assert "|" in frame.loc[0, "mean"]


def test_ties_prefer_the_smaller_model():
    X, labels = _xor()
    result = sweep_hyperparams(X, labels, {"n_trees": [5, 20], "max_depth": [8], "max_features": [2]},
                               k_folds=4, seed=1)
    tied = [c for c in result.cells if c.mean_tp == max(x.mean_tp for x in result.cells)
            and c.mean_fp == min(x.mean_fp for x in result.cells)]
    if len(tied) == 2:
        assert result.best.n_trees == 5


def test_stratified_folds_are_balanced():
    y = np.array([0] * 23 + [1] * 10 + [2] * 7)
    folds = stratified_folds(y, 5, seed=3)
    for c in (0, 1, 2):
        sizes = np.bincount(folds[y == c], minlength=5)
        assert sizes.max() - sizes.min() <= 1
    assert np.array_equal(folds, stratified_folds(y, 5, seed=3))


def test_too_few_samples_for_the_folds():
    y = np.array([0] * 10 + [1] * 3)
    with pytest.raises(ClassifierError) as e:
        stratified_folds(y, 5)
    assert e.value.code == "INSUFFICIENT_SAMPLES"


def test_grid_validation():
    assert len(expand_grid({"n_trees": [5, 10], "max_depth": [2], "max_features": [2, 4, 6]})) == 6
    assert expand_grid([Hyperparams(5, 2, 2)]) == [Hyperparams(5, 2, 2)]
    with pytest.raises(ClassifierError):
        expand_grid({"n_trees": [5]})
    with pytest.raises(ClassifierError):
        expand_grid({"n_trees": [5], "max_depth": [0], "max_features": [2]})
    with pytest.raises(ClassifierError):
        expand_grid([])
