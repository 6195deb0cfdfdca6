# vrsense/session/export.py

"""
Interval attribute export: one CSV row per closed interval with A1..A40 and
the interval's label (training format).
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import pandas as pd

from vrsense.session.attributes import ATTRIBUTE_COLUMNS
from vrsense.session.context import SessionReport

logger = logging.getLogger(__name__)

ID_COLUMNS = ["session", "app", "interval"]
LABEL_COLUMN = "label"

# (user, app) -> {interval index: state name}
TruthLabels = Dict[Tuple[str, str], Dict[int, str]]


def session_id(report: SessionReport) -> str:
    return f"{report.user}|{report.app}|{report.start:.6f}"


def attribute_frame(reports: Iterable[SessionReport], truth: Optional[TruthLabels] = None) -> pd.DataFrame:
    """
    Rows for every interval of every report. Labels come from ``truth`` when
    given (intervals without a true label are dropped), else from the
    report's own timeline.
    """
    rows: List[Dict] = []
    for report in reports:
        labels = None
        if truth is not None:
            labels = truth.get((report.user, report.app))
            if labels is None:
                logger.debug(f"No ground truth for {report.user} {report.app}; skipped")
                continue
        predicted = {entry.interval: entry.state.value for entry in report.timeline}
        for record in report.intervals:
            label = labels.get(record.index) if labels is not None else predicted.get(record.index)
            if label is None:
                continue
            row = {"session": session_id(report), "app": report.app, "interval": record.index}
            row.update(record.attributes.to_dict())
            row[LABEL_COLUMN] = label
            rows.append(row)
    return pd.DataFrame(rows, columns=ID_COLUMNS + ATTRIBUTE_COLUMNS + [LABEL_COLUMN])


def export_attributes(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote {len(frame)} interval rows to {path}")
    return path


def load_attributes(paths) -> pd.DataFrame:
    """Read and concatenate one or more attribute CSVs (old and newly labelled data)."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    frames = []
    for path in paths:
        frame = pd.read_csv(path, dtype={"session": str, "app": str, LABEL_COLUMN: str})
        missing = [c for c in ATTRIBUTE_COLUMNS + [LABEL_COLUMN] if c not in frame.columns]
        if missing:
            raise ValueError(f"{path} is missing columns {missing[:5]}")
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=ID_COLUMNS + ATTRIBUTE_COLUMNS + [LABEL_COLUMN])
    return pd.concat(frames, ignore_index=True)
