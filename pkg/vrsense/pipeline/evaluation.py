# vrsense/pipeline/evaluation.py

"""
Accuracy of session reports against ground-truth sidecars.

Session level: a report counts as a true detection when it belongs to the
same (user, app) as a sidecar and starts within one interval of it.
Flow level: candidate flows from the engine's flow log, split by duration.
Interval level: confusion matrix of true vs. reported states.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from vrsense.errors import EvaluationError
from vrsense.session.context import SessionReport
from vrsense.session.states import StateLabel
from vrsense.synth.script import GroundTruthSidecar
from vrsense.utils.helpers import format_rate, format_tp_fp, per_class_rates

logger = logging.getLogger(__name__)

# Half-open buckets; a flow of exactly 30 s is Long, exactly 10 s is Med.
LONG_FLOW_SECONDS = 30.0
SHORT_FLOW_SECONDS = 10.0
FLOW_BUCKETS = ("All", "Long", "Med", "Short")

KeyId = Tuple[str, str, int, int, str]


def duration_bucket(seconds: float) -> str:
    if seconds >= LONG_FLOW_SECONDS:
        return "Long"
    if seconds >= SHORT_FLOW_SECONDS:
        return "Med"
    return "Short"


def _key_id(key: Dict) -> KeyId:
    return (key["src_ip"], key["dst_ip"], int(key["src_port"]), int(key["dst_port"]), key["transport"])


def _rate(hits: int, total: int) -> float:
    return hits / total if total else 0.0


@dataclass
class EvaluationResult:
    truth_sessions: int
    detected_sessions: int
    false_sessions: int
    reported_sessions: int
    split_sessions: int
    confusion: pd.DataFrame
    per_class: Dict[str, Tuple[float, float]]
    flows: Optional[pd.DataFrame] = None
    start_offsets: List[float] = field(default_factory=list)

    @property
    def session_tp(self) -> float:
        return _rate(self.detected_sessions, self.truth_sessions)

    @property
    def session_fp(self) -> float:
        return _rate(self.false_sessions, self.reported_sessions)

    def session_row(self) -> str:
        if not self.truth_sessions:
            return f"n/a|{format_rate(self.session_fp)}"
        return format_tp_fp(self.session_tp, self.session_fp)

    def per_class_table(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"TP|FP": {label: format_tp_fp(tp, fp) for label, (tp, fp) in self.per_class.items()}}
        )

    def to_dict(self) -> Dict:
        data = {
            "sessions": {
                "truth": self.truth_sessions,
                "detected": self.detected_sessions,
                "false": self.false_sessions,
                "reported": self.reported_sessions,
                "split": self.split_sessions,
                "tp_rate": self.session_tp,
                "fp_rate": self.session_fp,
                "TP|FP": self.session_row(),
            },
            "per_class": {label: {"tp_rate": tp, "fp_rate": fp, "TP|FP": format_tp_fp(tp, fp)}
                          for label, (tp, fp) in self.per_class.items()},
            "confusion": {str(k): {str(c): int(v) for c, v in row.items()}
                          for k, row in self.confusion.to_dict(orient="index").items()},
        }
        if self.flows is not None:
            data["flows"] = self.flows.to_dict(orient="index")
        return data


def match_sessions(reports: Sequence[SessionReport], sidecars: Sequence[GroundTruthSidecar]):
    """
    Pair each report with the nearest-starting sidecar of the same (user, app).
    Returns (pairs, unmatched reports, number of extra reports for an
    already matched sidecar).
    """
    by_owner: Dict[Tuple[str, str], List[GroundTruthSidecar]] = defaultdict(list)
    for sidecar in sidecars:
        by_owner[(sidecar.user, sidecar.app)].append(sidecar)

    pairs: Dict[int, Tuple[GroundTruthSidecar, SessionReport]] = {}
    unmatched, split = [], 0
    for report in sorted(reports, key=lambda r: (r.start, r.user, r.app)):
        candidates = [s for s in by_owner.get((report.user, report.app), [])
                      if s.start - s.interval_len <= report.start <= s.end + s.interval_len]
        if not candidates:
            unmatched.append(report)
            continue
        sidecar = min(candidates, key=lambda s: abs(report.start - s.start))
        if abs(report.interval_len - sidecar.interval_len) > 1e-9:
            raise EvaluationError(
                f"Report for {report.user} {report.app} uses {report.interval_len}s intervals, "
                f"ground truth uses {sidecar.interval_len}s"
            )
        if id(sidecar) in pairs:
            split += 1
            continue
        pairs[id(sidecar)] = (sidecar, report)
    return list(pairs.values()), unmatched, split


def interval_confusion(pairs: Iterable[Tuple[GroundTruthSidecar, SessionReport]]) -> pd.DataFrame:
    """Rows are true states, columns reported states; missing intervals count as UNKNOWN."""
    truth, predicted = [], []
    for sidecar, report in pairs:
        shift = round((report.start - sidecar.start) / sidecar.interval_len)
        reported = {entry.interval: entry.state for entry in report.timeline}
        for interval in sidecar.intervals:
            truth.append(interval.state.value)
            predicted.append(reported.get(interval.index - shift, StateLabel.UNKNOWN).value)

    order = [label.value for label in StateLabel]
    rows = [label for label in order if label in set(truth)]
    columns = [label for label in order if label in set(truth) | set(predicted)]
    if not truth:
        return pd.DataFrame(index=pd.Index([], name="truth"), columns=pd.Index([], name="reported"), dtype=int)
    matrix = pd.crosstab(pd.Series(truth, name="truth"), pd.Series(predicted, name="reported"))
    return matrix.reindex(index=rows, columns=columns, fill_value=0).astype(int)


def class_rates(confusion: pd.DataFrame) -> Dict[str, Tuple[float, float]]:
    labels = list(dict.fromkeys(list(confusion.index) + list(confusion.columns)))
    square = confusion.reindex(index=labels, columns=labels, fill_value=0).to_numpy(dtype=np.int64)
    rates = per_class_rates(square)
    return {label: rates[i] for i, label in enumerate(labels) if label in confusion.index}


def flow_detection(sidecars: Sequence[GroundTruthSidecar], flow_log: Iterable[Dict]) -> pd.DataFrame:
    """
    TP: share of true metaverse flows (by ground-truth duration) the engine
    matched. FP: share of the other candidate flows (by observed duration)
    the engine matched anyway.
    """
    truth: Dict[KeyId, float] = {}
    for sidecar in sidecars:
        for flow in sidecar.flows:
            key = _key_id(flow.key.to_dict())
            truth[key] = max(truth.get(key, 0.0), flow.duration)

    observed: Dict[KeyId, Tuple[bool, float]] = {}
    for record in flow_log:
        key = _key_id(record["key"])
        matched = record["status"] == "MATCHED"
        duration = float(record["last_seen"]) - float(record["first_seen"])
        was_matched, was_duration = observed.get(key, (False, 0.0))
        observed[key] = (was_matched or matched, max(was_duration, duration))

    counts = {bucket: {"truth": 0, "detected": 0, "negatives": 0, "false": 0} for bucket in FLOW_BUCKETS}
    for key, duration in truth.items():
        detected = observed.get(key, (False, 0.0))[0]
        for bucket in ("All", duration_bucket(duration)):
            counts[bucket]["truth"] += 1
            counts[bucket]["detected"] += detected
    for key, (matched, duration) in observed.items():
        if key in truth:
            continue
        for bucket in ("All", duration_bucket(duration)):
            counts[bucket]["negatives"] += 1
            counts[bucket]["false"] += matched

    table = pd.DataFrame.from_dict(counts, orient="index").loc[list(FLOW_BUCKETS)]
    table["tp_rate"] = [_rate(d, t) for d, t in zip(table["detected"], table["truth"])]
    table["fp_rate"] = [_rate(f, n) for f, n in zip(table["false"], table["negatives"])]
    table["TP|FP"] = [format_tp_fp(tp, fp) for tp, fp in zip(table["tp_rate"], table["fp_rate"])]
    return table


def evaluate(reports: Sequence[SessionReport], sidecars: Sequence[GroundTruthSidecar],
             flow_log: Optional[Iterable[Dict]] = None) -> EvaluationResult:
    reports = list(reports)
    pairs, unmatched, split = match_sessions(reports, sidecars)
    for report in unmatched:
        logger.info(f"False session: {report.user} {report.app} at {report.start:.6f}")
    confusion = interval_confusion(pairs)
    result = EvaluationResult(
        truth_sessions=len(sidecars),
        detected_sessions=len(pairs),
        false_sessions=len(unmatched),
        reported_sessions=len(reports),
        split_sessions=split,
        confusion=confusion,
        per_class=class_rates(confusion),
        flows=flow_detection(sidecars, flow_log) if flow_log is not None else None,
        start_offsets=[report.start - sidecar.start for sidecar, report in pairs],
    )
    logger.info(f"Evaluated {len(reports)} reports against {len(sidecars)} sessions: "
                f"session {result.session_row()}")
    return result
