from vrsense.classifier.forest import (  # noqa: F401
    FeatureSpec, ForestModel, Hyperparams, Prediction, load_forest, predict, save_forest, train_forest,
)
from vrsense.classifier.sweep import SweepResult, sweep_hyperparams  # noqa: F401
from vrsense.classifier.stateful import (  # noqa: F401
    ModelRegistry, StateClassifier, classify_interval, resolve_threshold, stateful_features, train_app_models,
    tune_stateful,
)
