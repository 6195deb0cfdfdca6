# vrsense/synth/script.py

"""
Session scripts (what a generated user does) and the ground-truth sidecars
written next to generated traces.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from vrsense.errors import EvaluationError, SynthError
from vrsense.flowtable.table import FlowKey
from vrsense.session.states import ALLOWED_STATES, DomainType, StateLabel, allowed_states

logger = logging.getLogger(__name__)

SIDECAR_VERSION = 1
DEFAULT_START = 1_700_000_000.0


@dataclass
class SessionScript:
    metaverse: str
    states: List[Tuple[StateLabel, float]]
    seed: int = 0
    user_ip: str = "10.0.0.2"
    start: float = DEFAULT_START
    rtt_ms: Optional[float] = None
    crowd_factor: float = 1.0
    interval_len: float = 10.0

    @property
    def duration(self) -> float:
        return float(sum(d for _, d in self.states))

    def validate(self) -> None:
        if self.states and self.states[0][0] is not StateLabel.HS:
            raise SynthError(f"Script for {self.user_ip} must start in HS, not {self.states[0][0].value}",
                             code="BAD_SCRIPT")
        allowed = ALLOWED_STATES.get(self.metaverse)
        for label, duration in self.states:
            if allowed is not None and label not in allowed:
                raise SynthError(f"{label.value} is not a state of {self.metaverse}", code="UNKNOWN_STATE_FOR_APP")
            if duration < 0:
                raise SynthError(f"Negative duration for {label.value}", code="BAD_SCRIPT")
        if self.crowd_factor < 0:
            raise SynthError("crowd_factor must be >= 0", code="BAD_SCRIPT")

    @classmethod
    def from_dict(cls, data: Dict, defaults: Optional[Dict] = None) -> "SessionScript":
        merged = dict(defaults or {})
        merged.update(data)
        try:
            states = [(StateLabel(name), float(duration)) for name, duration in merged.get("states", [])]
        except ValueError as e:
            raise SynthError(f"Bad state in script: {e}", code="BAD_SCRIPT")
        if "app" not in merged and "metaverse" not in merged:
            raise SynthError("Script needs an 'app'", code="BAD_SCRIPT")
        return cls(
            metaverse=merged.get("app") or merged["metaverse"],
            states=states,
            seed=int(merged.get("seed", 0)),
            user_ip=merged.get("user_ip", "10.0.0.2"),
            start=float(merged.get("start", DEFAULT_START)),
            rtt_ms=float(merged["rtt_ms"]) if merged.get("rtt_ms") is not None else None,
            crowd_factor=float(merged.get("crowd_factor", 1.0)),
            interval_len=float(merged.get("interval_len", 10.0)),
        )

    def to_dict(self) -> Dict:
        return {
            "app": self.metaverse, "states": [[label.value, duration] for label, duration in self.states],
            "seed": self.seed, "user_ip": self.user_ip, "start": self.start, "rtt_ms": self.rtt_ms,
            "crowd_factor": self.crowd_factor, "interval_len": self.interval_len,
        }


def load_scripts(path, overrides: Optional[Dict] = None) -> List[SessionScript]:
    """A script file holds one script object or {"sessions": [...]} with shared defaults."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SynthError(f"Cannot read script {path}: {e}", code="BAD_SCRIPT")
    defaults: Dict = {}
    if isinstance(data, list):
        entries = data
    elif "sessions" in data:
        entries = data["sessions"]
        defaults = {k: v for k, v in data.items() if k not in ("sessions", "background")}
    else:
        entries = [data]
    scripts = []
    for entry in entries:
        entry = dict(entry)
        entry.update({k: v for k, v in (overrides or {}).items() if v is not None})
        scripts.append(SessionScript.from_dict(entry, defaults))
    return scripts


def random_script(metaverse: str, seed: int, user_ip: str, profiles, n_states: int = 4,
                  start: float = DEFAULT_START, max_duration: Optional[float] = None) -> SessionScript:
    """HS first, then states drawn from the app's allowed set with profile durations."""
    rng = np.random.default_rng(seed)
    allowed = [s for s in allowed_states(metaverse) if s in profiles]
    states = [StateLabel.HS]
    for _ in range(n_states - 1):
        choices = [s for s in allowed if s is not states[-1]] or allowed
        states.append(choices[int(rng.integers(len(choices)))])
    timeline = [(s, round(profiles[s].duration.sample(rng))) for s in states]
    if max_duration is not None:
        clipped, total = [], 0.0
        for label, duration in timeline:
            duration = min(duration, max_duration - total)
            if duration <= 0:
                break
            clipped.append((label, duration))
            total += duration
        timeline = clipped
    return SessionScript(metaverse, timeline, seed=seed, user_ip=user_ip, start=start)


@dataclass
class IntervalTruth:
    index: int
    start: float
    end: float
    state: StateLabel

    def to_dict(self):
        return {"index": self.index, "start": self.start, "end": self.end, "state": self.state.value}


@dataclass
class FlowTruth:
    key: FlowKey
    domain_type: DomainType
    rtt_ms: Optional[float]
    first_seen: float
    last_seen: float

    @property
    def duration(self) -> float:
        return self.last_seen - self.first_seen

    def to_dict(self):
        return {"key": self.key.to_dict(), "domain_type": self.domain_type.value, "rtt_ms": self.rtt_ms,
                "first_seen": self.first_seen, "last_seen": self.last_seen}

    @classmethod
    def from_dict(cls, data):
        return cls(FlowKey.from_dict(data["key"]), DomainType(data["domain_type"]),
                   data.get("rtt_ms"), float(data["first_seen"]), float(data["last_seen"]))


@dataclass
class GroundTruthSidecar:
    user: str
    app: str
    start: float
    end: float
    interval_len: float
    intervals: List[IntervalTruth] = field(default_factory=list)
    flows: List[FlowTruth] = field(default_factory=list)
    seed: int = 0

    def labels(self) -> Dict[int, str]:
        return {iv.index: iv.state.value for iv in self.intervals}

    def to_dict(self):
        return {
            "user": self.user, "app": self.app, "start": self.start, "end": self.end,
            "interval_len": self.interval_len, "seed": self.seed,
            "intervals": [iv.to_dict() for iv in self.intervals],
            "flows": [flow.to_dict() for flow in self.flows],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            user=data["user"], app=data["app"], start=float(data["start"]), end=float(data["end"]),
            interval_len=float(data["interval_len"]), seed=int(data.get("seed", 0)),
            intervals=[IntervalTruth(int(iv["index"]), float(iv["start"]), float(iv["end"]), StateLabel(iv["state"]))
                       for iv in data.get("intervals", [])],
            flows=[FlowTruth.from_dict(f) for f in data.get("flows", [])],
        )

    def save(self, path) -> Path:
        return save_sidecars([self], path)


def tile_intervals(start: float, states: Sequence[Tuple[StateLabel, float]],
                   interval_len: float) -> List[IntervalTruth]:
    """
    Cut [start, start + total) into intervals; each takes the state that
    covers most of it (the earlier state on a tie).
    """
    total = sum(d for _, d in states)
    if total <= 0:
        return []
    segments, t = [], 0.0
    for label, duration in states:
        segments.append((t, t + duration, label))
        t += duration
    intervals = []
    for index in range(math.ceil(total / interval_len - 1e-9)):
        lo, hi = index * interval_len, min((index + 1) * interval_len, total)
        best, best_cover = None, -1.0
        for seg_lo, seg_hi, label in segments:
            cover = min(hi, seg_hi) - max(lo, seg_lo)
            if cover > best_cover + 1e-9:
                best, best_cover = label, cover
        intervals.append(IntervalTruth(index, start + lo, start + hi, best))
    return intervals


def save_sidecars(sidecars: Sequence[GroundTruthSidecar], path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"version": SIDECAR_VERSION, "sessions": [s.to_dict() for s in sidecars]}
        path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    except OSError as e:
        raise SynthError(f"Cannot write sidecar {path}: {e}", code="IO_FAILURE")
    logger.info(f"Wrote ground truth for {len(sidecars)} sessions to {path}")
    return path


def load_sidecars(paths) -> List[GroundTruthSidecar]:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    sidecars = []
    for path in paths:
        try:
            data = json.loads(Path(path).read_text())
            entries = data["sessions"] if "sessions" in data else [data]
            sidecars.extend(GroundTruthSidecar.from_dict(entry) for entry in entries)
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise EvaluationError(f"Cannot read ground truth {path}: {e}")
    return sidecars


def sidecar_labels(sidecars: Sequence[GroundTruthSidecar]) -> Dict[Tuple[str, str], Dict[int, str]]:
    """Training labels keyed like the attribute export expects: (user, app) -> {interval: state}."""
    return {(s.user, s.app): s.labels() for s in sidecars}
