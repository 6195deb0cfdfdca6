import numpy as np
import pytest

from vrsense.classifier.forest import (
    FeatureSpec, ForestModel, Hyperparams, Tree, load_forest, predict, predict_many, save_forest, train_forest,
    tree_votes,
)
from vrsense.errors import ClassifierError, ModelFileError
from vrsense.session.states import StateLabel


def _blobs(seed=0, n=60, dims=40):
    rng = np.random.default_rng(seed)
    hs = rng.normal(0.0, 1.0, size=(n, dims))
    mh = rng.normal(10.0, 1.0, size=(n, dims))
    X = np.vstack([hs, mh])
    labels = [StateLabel.HS] * n + [StateLabel.MH] * n
    return X, labels


@pytest.fixture(scope="module")
def model():
    X, labels = _blobs()
    return train_forest(X, labels, Hyperparams(n_trees=15, max_depth=4, max_features=5), seed=3, app="Multiverse")


def _walk(tree, x):
    node = 0
    while tree.feature[node] != -1:
        node = tree.left[node] if x[tree.feature[node]] < tree.threshold[node] else tree.right[node]
    return int(np.argmax(tree.counts[node]))


def test_separable_training_data_is_learned(model):
    X, labels = _blobs()
    predictions = predict_many(model, X)
    assert [p.label for p in predictions] == labels
    assert model.label_space == [StateLabel.HS, StateLabel.MH]
    assert all(0.0 < p.confidence <= 1.0 for p in predictions)


def test_votes_match_a_brute_force_walk(model):
    X, _ = _blobs(seed=9)
    for row in X[::7]:
        expected = np.bincount([_walk(tree, row) for tree in model.trees], minlength=2)
        assert tree_votes(model, row).tolist() == expected.tolist()
        pred = predict(model, row)
        assert pred.confidence == expected.max() / len(model.trees)


def test_same_seed_gives_identical_model_files(tmp_path):
    X, labels = _blobs()
    hp = Hyperparams(n_trees=10, max_depth=6, max_features=8)
    a = save_forest(train_forest(X, labels, hp, seed=1), tmp_path / "a.json")
    b = save_forest(train_forest(X, labels, hp, seed=1), tmp_path / "b.json")
    c = save_forest(train_forest(X, labels, hp, seed=2), tmp_path / "c.json")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_saved_model_predicts_the_same(tmp_path, model):
    loaded = load_forest(save_forest(model, tmp_path / "m.json"))
    X, _ = _blobs(seed=4)
    assert [p for p in predict_many(loaded, X)] == [p for p in predict_many(model, X)]
    assert loaded.app == "Multiverse"
    assert loaded.feature_spec is FeatureSpec.STATELESS_40


def test_vote_tie_goes_to_the_earlier_label():
    left, right = Tree(), Tree()
    left.add_node([3, 0])
    right.add_node([0, 3])
    model = ForestModel(trees=[left, right], n_features=2, label_space=[StateLabel.HS, StateLabel.SUE],
                        hyperparams=Hyperparams(5, 1, 2))
    pred = predict(model, [0.0, 0.0])
    assert pred.label is StateLabel.HS
    assert pred.confidence == 0.5


def test_training_errors():
    X, labels = _blobs(n=5)
    hp = Hyperparams(n_trees=5, max_depth=2, max_features=2)
    with pytest.raises(ClassifierError) as e:
        train_forest(np.empty((0, 40)), [], hp)
    assert e.value.code == "EMPTY_DATASET"
    with pytest.raises(ClassifierError) as e:
        train_forest(X, labels[:-1], hp)
    assert e.value.code == "FEATURE_DIM_MISMATCH"
    with pytest.raises(ClassifierError) as e:
        train_forest(X, labels, hp, label_space=[StateLabel.HS, StateLabel.SUE])
    assert e.value.code == "LABEL_OUTSIDE_APP"
    with pytest.raises(ClassifierError) as e:
        train_forest(X, labels, Hyperparams(n_trees=500, max_depth=2, max_features=2))
    assert e.value.code == "BAD_HYPERPARAMS"


def test_wrong_feature_count_at_prediction(model):
    with pytest.raises(ClassifierError) as e:
        predict(model, np.zeros(16))
    assert e.value.code == "FEATURE_DIM_MISMATCH"


def test_single_class_model_is_constant():
    X = np.random.default_rng(0).normal(size=(10, 40))
    model = train_forest(X, [StateLabel.HS] * 10, Hyperparams(5, 3, 4))
    assert all(len(tree.feature) == 1 for tree in model.trees)
    assert predict(model, X[0]) == predict(model, X[1])


def test_unsupported_model_version(tmp_path, model):
    path = save_forest(model, tmp_path / "m.json")
    path.write_text(path.read_text().replace('"version":1', '"version":99'))
    with pytest.raises(ModelFileError) as e:
        load_forest(path)
    assert e.value.code == "SCHEMA_MISMATCH"
