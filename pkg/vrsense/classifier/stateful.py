# vrsense/classifier/stateful.py

"""
Stateful interval classification.

The stateful forest sees the 40 interval attributes followed by a one-hot
block for each of the past N states (oldest first). An interval falls back
to the stateless forest when the session has fewer than N past states or the
stateful vote share is below the threshold T. Training uses ground-truth
past states; tuning replays held-out sessions closed-loop on the model's own
predictions.
"""

import logging
from collections import deque
from pathlib import Path
from typing import Deque, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from vrsense.classifier.forest import (
    FeatureSpec, ForestModel, Hyperparams, Prediction, load_forest, predict, train_forest,
)
from vrsense.classifier.sweep import DEFAULT_K_FOLDS
from vrsense.errors import ClassifierError
from vrsense.session.attributes import ATTRIBUTE_COLUMNS, HOST_LEVEL_SLICE, AttributeVector
from vrsense.session.context import ClassificationResult, SessionContext
from vrsense.session.export import LABEL_COLUMN
from vrsense.session.states import Provenance, StateLabel, allowed_states
from vrsense.utils.helpers import confusion_matrix, format_tp_fp, per_class_rates

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.85
THRESHOLD_PRESETS = {"main": 0.85, "appendix": 0.80}
TUNE_N_VALUES = list(range(1, 11))
TUNE_T_VALUES = [round(0.30 + 0.05 * i, 2) for i in range(14)]


def resolve_threshold(value) -> float:
    """Accept a preset name ('main', 'appendix') or a number."""
    if isinstance(value, str) and value.strip().lower() in THRESHOLD_PRESETS:
        return THRESHOLD_PRESETS[value.strip().lower()]
    return float(value)


def past_state_onehots(past: Sequence[StateLabel], label_space: Sequence[StateLabel]) -> np.ndarray:
    """One block of |label_space| entries per past state, oldest first."""
    blocks = np.zeros((len(past), len(label_space)))
    index = {label: i for i, label in enumerate(label_space)}
    for slot, label in enumerate(past):
        if label in index:
            blocks[slot, index[label]] = 1.0
    return blocks.ravel()


def stateful_features(attrs, past: Sequence[StateLabel], label_space: Sequence[StateLabel]) -> np.ndarray:
    values = attrs.as_array() if isinstance(attrs, AttributeVector) else np.asarray(attrs, dtype=np.float64)
    return np.concatenate([values, past_state_onehots(past, label_space)])


def stateless_features(model: ForestModel, attrs) -> np.ndarray:
    values = attrs.as_array() if isinstance(attrs, AttributeVector) else np.asarray(attrs, dtype=np.float64)
    if model.feature_spec is FeatureSpec.HOST_LEVEL_16 and values.size == len(ATTRIBUTE_COLUMNS):
        return values[HOST_LEVEL_SLICE]
    return values


def decide(attrs, past: Sequence[StateLabel], stateless: ForestModel, stateful: Optional[ForestModel],
           n_past: int, threshold: float) -> ClassificationResult:
    if stateful is not None and len(past) >= n_past:
        recent = list(past)[len(past) - n_past:]
        result: Prediction = predict(stateful, stateful_features(attrs, recent, stateful.label_space))
        if result.confidence >= threshold:
            return ClassificationResult(result.label, result.confidence, Provenance.STATEFUL)
    result = predict(stateless, stateless_features(stateless, attrs))
    return ClassificationResult(result.label, result.confidence, Provenance.STATELESS_FALLBACK)


def classify_interval(session: SessionContext, attrs: AttributeVector, stateless: Optional[ForestModel],
                      stateful: Optional[ForestModel], n_past: int,
                      threshold: float = DEFAULT_THRESHOLD) -> ClassificationResult:
    if stateless is None:
        return ClassificationResult(StateLabel.UNKNOWN, 0.0, Provenance.NONE)
    result = decide(attrs, session.past_states, stateless, stateful, n_past, threshold)
    session.past_states.append(result.label)
    return result


class StateClassifier:
    """Per-app classification hook handed to every SessionContext of that app."""

    def __init__(self, stateless: ForestModel, stateful: Optional[ForestModel] = None,
                 threshold: float = DEFAULT_THRESHOLD, past_states: Optional[int] = None):
        self.stateless = stateless
        self.stateful = stateful
        self.threshold = threshold
        self.past_states = past_states or (stateful.past_states if stateful else 0) or 1

    def __call__(self, session: SessionContext, attrs: AttributeVector) -> ClassificationResult:
        return classify_interval(session, attrs, self.stateless, self.stateful, self.past_states, self.threshold)


def model_slug(app: str) -> str:
    return app.lower().replace(" ", "_")


def model_paths(model_dir, app: str) -> Tuple[Path, Path]:
    model_dir = Path(model_dir)
    slug = model_slug(app)
    return model_dir / f"{slug}.stateless.json", model_dir / f"{slug}.stateful.json"


class ModelRegistry:
    """Stateless and stateful models per app, immutable once loaded."""

    def __init__(self, threshold: float = DEFAULT_THRESHOLD):
        self.threshold = threshold
        self.models: Dict[str, Tuple[ForestModel, Optional[ForestModel]]] = {}

    def register(self, app: str, stateless: ForestModel, stateful: Optional[ForestModel] = None) -> None:
        self.models[app] = (stateless, stateful)

    @property
    def max_past_states(self) -> int:
        return max((s.past_states for _, s in self.models.values() if s is not None), default=0)

    @classmethod
    def from_directory(cls, model_dir, apps: Iterable[str], threshold: float = DEFAULT_THRESHOLD) -> "ModelRegistry":
        registry = cls(threshold)
        if model_dir is None:
            return registry
        for app in apps:
            stateless_path, stateful_path = model_paths(model_dir, app)
            if not stateless_path.exists():
                logger.warning(f"No stateless model for {app} in {model_dir}; its intervals stay UNKNOWN")
                continue
            stateful = load_forest(stateful_path) if stateful_path.exists() else None
            registry.register(app, load_forest(stateless_path), stateful)
            logger.info(f"Loaded classifier models for {app} (stateful: {stateful is not None})")
        return registry

    def classify_factory(self, app: str) -> Optional[StateClassifier]:
        entry = self.models.get(app)
        if entry is None:
            return None
        return StateClassifier(entry[0], entry[1], self.threshold)


def _clean_frame(frame: pd.DataFrame, label_space: Sequence[StateLabel]) -> pd.DataFrame:
    known = {label.value for label in label_space}
    unknown = frame[LABEL_COLUMN] == StateLabel.UNKNOWN.value
    if unknown.any():
        logger.warning(f"Dropping {int(unknown.sum())} rows labelled UNKNOWN")
        frame = frame[~unknown]
    outside = sorted(set(frame[LABEL_COLUMN]) - known)
    if outside:
        raise ClassifierError(f"labels {outside} are outside the app's states {sorted(known)}",
                              code="LABEL_OUTSIDE_APP")
    if frame.empty:
        raise ClassifierError("No labelled rows to train on", code="EMPTY_DATASET")
    return frame


def _sorted_sessions(frame: pd.DataFrame):
    if "session" not in frame.columns:
        yield "all", frame
        return
    for sid, rows in frame.groupby("session", sort=True):
        yield sid, rows.sort_values("interval") if "interval" in rows.columns else rows


def build_stateless_dataset(frame: pd.DataFrame, feature_spec: FeatureSpec = FeatureSpec.STATELESS_40,
                            label_space: Optional[Sequence[StateLabel]] = None):
    label_space = list(label_space) if label_space is not None else list(StateLabel)
    frame = _clean_frame(frame, label_space)
    columns = ATTRIBUTE_COLUMNS[HOST_LEVEL_SLICE] if feature_spec is FeatureSpec.HOST_LEVEL_16 else ATTRIBUTE_COLUMNS
    X = frame[columns].to_numpy(dtype=np.float64)
    labels = [StateLabel(v) for v in frame[LABEL_COLUMN]]
    return X, labels


def build_stateful_dataset(frame: pd.DataFrame, n_past: int, label_space: Sequence[StateLabel]):
    """Rows with at least N earlier intervals in their session, past states taken from the labels."""
    label_space = list(label_space)
    frame = _clean_frame(frame, label_space)
    rows: List[np.ndarray] = []
    labels: List[StateLabel] = []
    for _, session_rows in _sorted_sessions(frame):
        attrs = session_rows[ATTRIBUTE_COLUMNS].to_numpy(dtype=np.float64)
        truth = [StateLabel(v) for v in session_rows[LABEL_COLUMN]]
        for i in range(n_past, len(truth)):
            rows.append(stateful_features(attrs[i], truth[i - n_past:i], label_space))
            labels.append(truth[i])
    if not rows:
        raise ClassifierError(f"No session has more than {n_past} labelled intervals", code="EMPTY_DATASET")
    return np.vstack(rows), labels


def train_app_models(frame: pd.DataFrame, app: str, hyperparams: Hyperparams, seed: int = 0,
                     mode: str = "stateful", n_past: int = 5) -> Tuple[ForestModel, Optional[ForestModel]]:
    """Train the stateless model, plus the stateful one when mode is 'stateful'."""
    label_space = allowed_states(app)
    spec = FeatureSpec.HOST_LEVEL_16 if mode == "hostlevel" else FeatureSpec.STATELESS_40
    X, labels = build_stateless_dataset(frame, spec, label_space)
    stateless = train_forest(X, labels, hyperparams, seed, label_space, spec, app=app)
    if mode != "stateful":
        return stateless, None
    X, labels = build_stateful_dataset(frame, n_past, label_space)
    stateful = train_forest(X, labels, hyperparams, seed, label_space, FeatureSpec.STATEFUL_40_PLUS_NK,
                            past_states=n_past, app=app)
    return stateless, stateful


def _replay_closed_loop(session_rows: pd.DataFrame, stateless: ForestModel, stateful: Optional[ForestModel],
                        n_past: int, threshold: float):
    attrs = session_rows[ATTRIBUTE_COLUMNS].to_numpy(dtype=np.float64)
    past: Deque[StateLabel] = deque(maxlen=n_past)
    predicted, fallbacks = [], 0
    for row in attrs:
        result = decide(row, past, stateless, stateful, n_past, threshold)
        fallbacks += result.provenance is Provenance.STATELESS_FALLBACK
        past.append(result.label)
        predicted.append(result.label)
    return predicted, fallbacks


def score_closed_loop(frame: pd.DataFrame, stateless: ForestModel, stateful: Optional[ForestModel] = None,
                      threshold: float = DEFAULT_THRESHOLD) -> Tuple[Dict[StateLabel, Tuple[float, float]], float]:
    """Per-class (TP, FP) of held-out sessions replayed in order, and the share of fallback decisions."""
    label_space = list(stateless.label_space)
    frame = _clean_frame(frame, label_space)
    index = {label: i for i, label in enumerate(label_space)}
    n_past = stateful.past_states if stateful is not None else 1
    truth, predicted, fallbacks = [], [], 0
    for _, rows in _sorted_sessions(frame):
        labels, used = _replay_closed_loop(rows, stateless, stateful, n_past, threshold)
        truth.extend(index[StateLabel(v)] for v in rows[LABEL_COLUMN])
        predicted.extend(index[label] for label in labels)
        fallbacks += used
    rates = per_class_rates(confusion_matrix(truth, predicted, len(label_space)))
    share = fallbacks / len(predicted) if predicted else 0.0
    return {label_space[i]: rates[i] for i in sorted(set(truth))}, share


def session_folds(frame: pd.DataFrame, k: int, seed: int = 0) -> Dict[str, int]:
    sessions = sorted(frame["session"].unique())
    if len(sessions) < k:
        raise ClassifierError(f"{len(sessions)} sessions cannot fill {k} folds", code="INSUFFICIENT_SAMPLES")
    order = np.random.default_rng(seed).permutation(len(sessions))
    return {sessions[i]: pos % k for pos, i in enumerate(order)}


def tune_stateful(frame: pd.DataFrame, app: str, hyperparams: Hyperparams,
                  n_values: Sequence[int] = TUNE_N_VALUES, t_values: Sequence[float] = TUNE_T_VALUES,
                  k_folds: int = DEFAULT_K_FOLDS, seed: int = 0) -> pd.DataFrame:
    """
    Closed-loop accuracy for every (N, T) pair with folds split by session.
    Returns one row per pair with per-class TP|FP strings and mean rates.
    """
    label_space = allowed_states(app)
    frame = _clean_frame(frame, label_space)
    folds = session_folds(frame, k_folds, seed)
    index = {label: i for i, label in enumerate(label_space)}
    cells = {(n, t): [np.zeros((len(label_space),) * 2, dtype=np.int64), 0, 0] for n in n_values for t in t_values}

    for fold in range(k_folds):
        in_test = frame["session"].map(folds) == fold
        train, test = frame[~in_test], frame[in_test]
        X, labels = build_stateless_dataset(train, FeatureSpec.STATELESS_40, label_space)
        stateless = train_forest(X, labels, hyperparams, seed, label_space, app=app)
        for n in n_values:
            try:
                X, labels = build_stateful_dataset(train, n, label_space)
                stateful = train_forest(X, labels, hyperparams, seed, label_space,
                                        FeatureSpec.STATEFUL_40_PLUS_NK, past_states=n, app=app)
            except ClassifierError:
                logger.warning(f"Fold {fold}: sessions too short for N={n}; stateless only")
                stateful = None
            for t in t_values:
                cell = cells[(n, t)]
                for _, rows in _sorted_sessions(test):
                    predicted, fallbacks = _replay_closed_loop(rows, stateless, stateful, n, t)
                    truth = [index[StateLabel(v)] for v in rows[LABEL_COLUMN]]
                    cell[0] += confusion_matrix(truth, [index[p] for p in predicted], len(label_space))
                    cell[1] += fallbacks
                    cell[2] += len(predicted)

    present = sorted({index[StateLabel(v)] for v in frame[LABEL_COLUMN]})
    table = []
    for (n, t), (matrix, fallbacks, total) in cells.items():
        rates = per_class_rates(matrix)
        row = {"N": n, "T": t}
        for i in present:
            row[label_space[i].value] = format_tp_fp(*rates[i])
        row["mean_tp"] = float(np.mean([rates[i][0] for i in present]))
        row["mean_fp"] = float(np.mean([rates[i][1] for i in present]))
        row["fallback_share"] = fallbacks / total if total else 0.0
        table.append(row)
    result = pd.DataFrame(table)
    best = result.sort_values(["mean_tp", "mean_fp"], ascending=[False, True]).iloc[0]
    logger.info(f"Best stateful setting for {app}: N={int(best['N'])}, T={best['T']:.2f} "
                f"(mean TP {best['mean_tp']:.4f})")
    return result


def score_model(model: ForestModel, X, labels) -> Dict[StateLabel, Tuple[float, float]]:
    """Per-class (TP, FP) rates of a trained model on held-out rows."""
    index = {label: i for i, label in enumerate(model.label_space)}
    truth = [index[l] for l in labels]
    predicted = [index[predict(model, row).label] for row in np.asarray(X, dtype=np.float64)]
    rates = per_class_rates(confusion_matrix(truth, predicted, len(model.label_space)))
    return {model.label_space[i]: rates[i] for i in sorted(set(truth))}
