# vrsense/utils/helpers.py

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


def format_rate(value: float) -> str:
    """0.996 -> '99.6%'; an exact zero prints as '0'."""
    if value == 0:
        return "0"
    return f"{value * 100:.1f}%"


def format_tp_fp(tp: float, fp: float) -> str:
    return f"{format_rate(tp)}|{format_rate(fp)}"


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> np.ndarray:
    """Rows are true labels, columns predicted labels."""
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return matrix


def per_class_rates(matrix: np.ndarray) -> List[Tuple[float, float]]:
    """
    (TP rate, FP rate) per class from a confusion matrix.

    TP rate is the share of a class's samples predicted as that class; FP rate
    is the share of the other classes' samples wrongly predicted as it. A class
    with no samples gets a TP rate of 0.
    """
    total = matrix.sum()
    rates = []
    for c in range(matrix.shape[0]):
        actual = matrix[c].sum()
        negatives = total - actual
        tp = matrix[c, c] / actual if actual else 0.0
        fp = (matrix[:, c].sum() - matrix[c, c]) / negatives if negatives else 0.0
        rates.append((float(tp), float(fp)))
    return rates


def write_jsonl(records: Iterable[Dict], path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            count += 1
    return count


def read_jsonl(path) -> List[Dict]:
    records = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                logger.error(f"Skipping malformed line {lineno} in {path}: {e}")
    return records
