import numpy as np
import pandas as pd
import pytest

from vrsense.classifier.forest import FeatureSpec, Hyperparams, save_forest, train_forest
from vrsense.classifier.stateful import (
    ModelRegistry, StateClassifier, build_stateful_dataset, decide, model_paths, resolve_threshold,
    score_closed_loop, stateful_features, train_app_models, tune_stateful,
)
from vrsense.errors import ClassifierError
from vrsense.session.attributes import ATTRIBUTE_COLUMNS, AttributeVector
from vrsense.session.context import SessionContext
from vrsense.session.export import LABEL_COLUMN
from vrsense.session.states import Provenance, StateLabel

HP = Hyperparams(n_trees=10, max_depth=6, max_features=10)


def _frame(n_sessions=6, length=12, seed=0):
    """VRChat-like sessions: HS for four intervals, then SUE with far more upstream volume."""
    rng = np.random.default_rng(seed)
    rows = []
    for s in range(n_sessions):
        for i in range(length):
            label = "HS" if i < 4 else "SUE"
            values = rng.normal(100.0 if label == "HS" else 5000.0, 5.0, size=40)
            row = {"session": f"s{s}", "app": "VRChat", "interval": i, LABEL_COLUMN: label}
            row.update(zip(ATTRIBUTE_COLUMNS, values))
            rows.append(row)
    return pd.DataFrame(rows)


@pytest.fixture(scope="module")
def models():
    return train_app_models(_frame(), "VRChat", HP, seed=0, mode="stateful", n_past=3)


def test_app_models_shapes(models):
    stateless, stateful = models
    assert stateless.label_space == [StateLabel.HS, StateLabel.SUE]
    assert stateless.n_features == 40
    assert stateful.feature_spec is FeatureSpec.STATEFUL_40_PLUS_NK
    assert stateful.n_features == 40 + 3 * 2
    assert stateful.past_states == 3


def test_host_level_mode():
    stateless, stateful = train_app_models(_frame(), "VRChat", HP, mode="hostlevel")
    assert stateful is None
    assert stateless.feature_spec is FeatureSpec.HOST_LEVEL_16
    assert stateless.n_features == 16


def test_stateful_rows_skip_the_first_intervals():
    X, labels = build_stateful_dataset(_frame(n_sessions=2, length=12), 5, [StateLabel.HS, StateLabel.SUE])
    assert X.shape == (2 * 7, 40 + 5 * 2)
    # interval 5 looks back on four HS intervals then one SUE
    assert X[0, 40:].tolist() == [1, 0, 1, 0, 1, 0, 1, 0, 0, 1]
    assert labels[0] is StateLabel.SUE


def test_one_hot_layout():
    attrs = AttributeVector(tuple(float(i) for i in range(40)))
    features = stateful_features(attrs, [StateLabel.SUE, StateLabel.HS], [StateLabel.HS, StateLabel.SUE])
    assert features[:40].tolist() == list(range(40))
    assert features[40:].tolist() == [0, 1, 1, 0]


def test_fallback_until_enough_past_states(models):
    stateless, stateful = models
    attrs = np.full(40, 5000.0)
    early = decide(attrs, [StateLabel.HS], stateless, stateful, n_past=3, threshold=0.0)
    assert early.provenance is Provenance.STATELESS_FALLBACK
    ready = decide(attrs, [StateLabel.HS] * 3, stateless, stateful, n_past=3, threshold=0.0)
    assert ready.provenance is Provenance.STATEFUL
    strict = decide(attrs, [StateLabel.HS] * 3, stateless, stateful, n_past=3, threshold=1.01)
    assert strict.provenance is Provenance.STATELESS_FALLBACK
    assert strict.label is StateLabel.SUE


def test_classifier_hook_tracks_past_states(models):
    stateless, stateful = models
    hook = StateClassifier(stateless, stateful, threshold=0.0)
    assert hook.past_states == 3
    session = SessionContext("10.0.0.9", "VRChat", 0.0, past_states=3)
    attrs = AttributeVector((100.0,) * 40)
    provenances = [hook(session, attrs).provenance for _ in range(5)]
    assert provenances == [Provenance.STATELESS_FALLBACK] * 3 + [Provenance.STATEFUL] * 2
    assert list(session.past_states) == [StateLabel.HS] * 3


def test_closed_loop_scores(models):
    stateless, stateful = models
    rates, share = score_closed_loop(_frame(seed=5), stateless, stateful, threshold=0.5)
    assert rates[StateLabel.HS][0] == 1.0
    assert rates[StateLabel.SUE][1] == 0.0
    assert 0.0 < share < 1.0


def test_tune_grid_has_one_row_per_pair():
    table = tune_stateful(_frame(), "VRChat", HP, n_values=[1, 2], t_values=[0.5, 0.9], k_folds=3, seed=0)
    assert len(table) == 4
    assert set(table["N"]) == {1, 2}
    assert {"HS", "SUE", "mean_tp", "mean_fp", "fallback_share"} <= set(table.columns)
    assert table["mean_tp"].max() == 1.0


def test_labels_outside_the_app_are_refused():
    frame = _frame()
    frame.loc[0, LABEL_COLUMN] = "CC"
    with pytest.raises(ClassifierError) as e:
        train_app_models(frame, "VRChat", HP)
    assert e.value.code == "LABEL_OUTSIDE_APP"


def test_registry_loads_saved_models(tmp_path, models):
    stateless, stateful = models
    stateless_path, stateful_path = model_paths(tmp_path, "VRChat")
    save_forest(stateless, stateless_path)
    save_forest(stateful, stateful_path)

    registry = ModelRegistry.from_directory(tmp_path, ["VRChat", "Multiverse"], threshold=0.8)
    assert list(registry.models) == ["VRChat"]
    assert registry.max_past_states == 3
    assert isinstance(registry.classify_factory("VRChat"), StateClassifier)
    assert registry.classify_factory("Multiverse") is None
    assert ModelRegistry.from_directory(None, ["VRChat"]).models == {}


def test_threshold_presets():
    assert resolve_threshold("main") == 0.85
    assert resolve_threshold("Appendix") == 0.80
    assert resolve_threshold("0.6") == 0.6
    assert model_paths("m", "Rec Room")[0].name == "rec_room.stateless.json"


def test_stateless_only_registry(models):
    stateless, _ = models
    registry = ModelRegistry()
    registry.register("VRChat", stateless)
    hook = registry.classify_factory("VRChat")
    session = SessionContext("10.0.0.9", "VRChat", 0.0)
    results = [hook(session, AttributeVector((5000.0,) * 40)) for _ in range(7)]
    assert all(r.provenance is Provenance.STATELESS_FALLBACK for r in results)
    assert all(r.label is StateLabel.SUE for r in results)
    assert train_forest(np.ones((2, 40)), ["HS", "HS"], HP).label_space == [StateLabel.HS]
