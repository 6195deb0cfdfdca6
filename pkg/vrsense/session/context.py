# vrsense/session/context.py

"""
Stage-3 state keeping.

A session exists for (user_ip, metaverse) once every prefix the app opens
during its initial HS state has been matched. From then on the session owns
its tracked flows, buckets their packets into intervals anchored at
session_start, and hands each closed interval's attribute vector to the
classification hook.
"""

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Tuple

from vrsense.capture.records import Direction, PacketRecord
from vrsense.flowtable.table import FlowKey
from vrsense.session.attributes import (
    UPSTREAM_ONLY, AttributeVector, FlowIntervalCounters, IntervalStats, compute_attributes,
)
from vrsense.session.states import DomainType, Provenance, StateLabel

logger = logging.getLogger(__name__)

DEFAULT_INTERVAL_LEN = 10.0
DEFAULT_SESSION_IDLE_TIMEOUT = 120.0
DEFAULT_CANDIDATE_TTL = 60.0
DEFAULT_PAST_STATES = 5


class SessionEvent(Enum):
    NONE = "NONE"
    SESSION_STARTED = "SESSION_STARTED"


class UdpAttachment(Enum):
    TRACKED = "tracked"
    ORPHANED = "orphaned"


@dataclass
class ClassificationResult:
    label: StateLabel
    confidence: float
    provenance: Provenance


@dataclass
class TimelineEntry:
    interval: int
    state: StateLabel
    confidence: float
    provenance: Provenance = Provenance.NONE

    def to_dict(self):
        return {"interval": self.interval, "state": self.state.value,
                "confidence": round(self.confidence, 6), "provenance": self.provenance.value}


@dataclass
class IntervalRecord:
    """What survives of a closed interval: its attributes and byte totals."""
    index: int
    start: float
    attributes: AttributeVector
    bytes_up: int
    bytes_down: int


@dataclass
class TrackedFlow:
    key: FlowKey
    domain_type: DomainType
    tracked_from: float
    rtt_ms: Optional[float] = None
    evicted: bool = False
    bytes_up: int = 0
    bytes_down: int = 0
    pkts_up: int = 0
    pkts_down: int = 0

    def to_dict(self, as_label=None):
        return {
            "key": self.key.to_dict(),
            "domain_type": self.domain_type.value,
            "rtt_ms": None if self.rtt_ms is None else round(self.rtt_ms, 6),
            "as_label": as_label,
            "tracked_from": self.tracked_from,
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
        }


@dataclass
class SessionReport:
    user: str
    app: str
    start: float
    end: float
    interval_len: float
    timeline: List[TimelineEntry]
    per_state: Dict[str, Dict[str, float]]
    flows: List[Dict]
    fallbacks: int = 0
    # closed intervals with their attribute vectors; not serialized
    intervals: List[IntervalRecord] = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "user": self.user,
            "app": self.app,
            "start": self.start,
            "end": self.end,
            "interval_len": self.interval_len,
            "timeline": [entry.to_dict() for entry in self.timeline],
            "per_state": self.per_state,
            "flows": self.flows,
            "fallbacks": self.fallbacks,
        }

    @classmethod
    def from_dict(cls, data):
        timeline = [TimelineEntry(int(e["interval"]), StateLabel(e["state"]), float(e["confidence"]),
                                  Provenance(e.get("provenance", "NONE"))) for e in data["timeline"]]
        return cls(user=data["user"], app=data["app"], start=float(data["start"]), end=float(data["end"]),
                   interval_len=float(data.get("interval_len", DEFAULT_INTERVAL_LEN)), timeline=timeline,
                   per_state=data.get("per_state", {}), flows=data.get("flows", []),
                   fallbacks=int(data.get("fallbacks", 0)))


ClassifyHook = Callable[["SessionContext", AttributeVector], Optional[ClassificationResult]]


class SessionContext:
    def __init__(self, user_ip: str, metaverse: str, session_start: float,
                 interval_len: float = DEFAULT_INTERVAL_LEN, past_states: int = DEFAULT_PAST_STATES,
                 idle_timeout: float = DEFAULT_SESSION_IDLE_TIMEOUT,
                 attribute_direction: str = UPSTREAM_ONLY, count_idle_flows: bool = True,
                 classify: Optional[ClassifyHook] = None):
        self.user_ip = user_ip
        self.metaverse = metaverse
        self.session_start = session_start
        self.session_end: Optional[float] = None
        self.interval_len = interval_len
        self.idle_timeout = idle_timeout
        self.attribute_direction = attribute_direction
        self.count_idle_flows = count_idle_flows
        self.classify = classify

        self.active_prefixes = set()
        self.tracked_flows: Dict[FlowKey, DomainType] = {}
        self.flow_info: Dict[FlowKey, TrackedFlow] = {}
        self.past_states: Deque[StateLabel] = deque(maxlen=past_states)
        self.state_timeline: List[TimelineEntry] = []
        self.intervals: List[IntervalRecord] = []
        self.last_activity = session_start
        self.fallbacks = 0
        self.stats_seconds = 0.0
        self.classify_seconds = 0.0
        self.current = IntervalStats(0, *self.interval_bounds(0))

    @property
    def n_past(self) -> int:
        return self.past_states.maxlen

    @property
    def current_state(self) -> StateLabel:
        return self.state_timeline[-1].state if self.state_timeline else StateLabel.UNKNOWN

    def interval_index(self, t: float) -> int:
        return max(0, math.floor((t - self.session_start) / self.interval_len))

    def interval_bounds(self, index: int) -> Tuple[float, float]:
        # products, not running sums, so streaming and offline indexing agree
        return (self.session_start + index * self.interval_len,
                self.session_start + (index + 1) * self.interval_len)

    def attach_flow(self, key: FlowKey, domain_type: DomainType, tracked_from: float,
                    rtt_ms: Optional[float] = None) -> None:
        info = self.flow_info.get(key)
        if info is not None:
            if info.evicted:
                info.evicted = False
                self.current.flows.setdefault(key, FlowIntervalCounters(key.transport, info.domain_type))
            return
        self.tracked_flows[key] = domain_type
        self.flow_info[key] = TrackedFlow(key, domain_type, tracked_from, rtt_ms)
        self.current.flows[key] = FlowIntervalCounters(key.transport, domain_type, is_new=True)

    def detach_flow(self, key: FlowKey) -> None:
        """An evicted flow stays in the running interval but is not carried into the next."""
        info = self.flow_info.get(key)
        if info is not None:
            info.evicted = True

    def update_rtt(self, key: FlowKey, rtt_ms: Optional[float]) -> None:
        if rtt_ms is not None and key in self.flow_info:
            self.flow_info[key].rtt_ms = rtt_ms

    def advance(self, now: float) -> int:
        """Close every interval that ends at or before ``now``; returns how many closed."""
        closed = 0
        while self.current.index < self.interval_index(now):
            self._close_interval()
            closed += 1
        return closed

    def _close_interval(self) -> None:
        stats = self.current
        started = time.perf_counter()
        attrs = compute_attributes(stats, self.attribute_direction, self.count_idle_flows)
        self.stats_seconds += time.perf_counter() - started

        self.intervals.append(IntervalRecord(stats.index, stats.start, attrs, stats.bytes_up, stats.bytes_down))
        started = time.perf_counter()
        result = self.classify(self, attrs) if self.classify else None
        self.classify_seconds += time.perf_counter() - started
        if result is None:
            result = ClassificationResult(StateLabel.UNKNOWN, 0.0, Provenance.NONE)
        if result.provenance is Provenance.STATELESS_FALLBACK:
            self.fallbacks += 1
        self.state_timeline.append(TimelineEntry(stats.index, result.label, result.confidence, result.provenance))

        nxt = IntervalStats(stats.index + 1, *self.interval_bounds(stats.index + 1))
        for key, counters in stats.flows.items():
            if not self.flow_info[key].evicted:
                nxt.flows[key] = FlowIntervalCounters(counters.transport, counters.domain_type)
        self.current = nxt

    def accumulate(self, pkt: PacketRecord, key: Optional[FlowKey] = None) -> IntervalStats:
        key = key or FlowKey.from_packet(pkt)
        if key not in self.tracked_flows:
            raise KeyError(f"{key} is not tracked by session {self.user_ip}/{self.metaverse}")
        # interval closes time themselves
        self.advance(pkt.timestamp)
        started = time.perf_counter()
        counters = self.current.flows.get(key)
        if counters is None:
            counters = self.current.flows[key] = FlowIntervalCounters(key.transport, self.tracked_flows[key])
        info = self.flow_info[key]
        if pkt.direction is Direction.UPSTREAM:
            counters.pkts_up += 1
            counters.bytes_up += pkt.payload_len
            info.pkts_up += 1
            info.bytes_up += pkt.payload_len
        else:
            counters.pkts_down += 1
            counters.bytes_down += pkt.payload_len
            info.pkts_down += 1
            info.bytes_down += pkt.payload_len
        self.last_activity = max(self.last_activity, pkt.timestamp)
        self.stats_seconds += time.perf_counter() - started
        return self.current

    def is_idle(self, now: float) -> bool:
        return now - self.last_activity >= self.idle_timeout

    def close(self, now: Optional[float] = None, as_labeler=None) -> SessionReport:
        """
        Finish the session at its last tracked packet. Intervals closed after
        that packet (by idle ticks) are dropped from the report.
        """
        self.session_end = self.last_activity
        last_index = self.interval_index(self.last_activity)
        if self.current.index <= last_index:
            self.advance(self.last_activity)
            self._close_interval()
        timeline = [e for e in self.state_timeline if e.interval <= last_index]
        intervals = [r for r in self.intervals if r.index <= last_index]

        per_state: Dict[str, Dict[str, float]] = {}
        for entry, record in zip(timeline, intervals):
            bucket = per_state.setdefault(entry.state.value, {"seconds": 0.0, "bytes_up": 0, "bytes_down": 0})
            bucket["seconds"] += self.interval_len
            bucket["bytes_up"] += record.bytes_up
            bucket["bytes_down"] += record.bytes_down

        flows = []
        for key, info in self.flow_info.items():
            label = as_labeler(key.dst_ip) if as_labeler else None
            flows.append(info.to_dict(label))
        fallbacks = sum(1 for e in timeline if e.provenance is Provenance.STATELESS_FALLBACK)
        logger.info(f"Session closed: {self.user_ip} {self.metaverse} "
                    f"{len(timeline)} intervals, {len(flows)} flows")
        return SessionReport(
            user=self.user_ip, app=self.metaverse, start=self.session_start, end=self.session_end,
            interval_len=self.interval_len, timeline=timeline, per_state=per_state, flows=flows,
            fallbacks=fallbacks, intervals=intervals,
        )


def accumulate(session: SessionContext, pkt: PacketRecord) -> IntervalStats:
    return session.accumulate(pkt)


def close_session(session: SessionContext, now: float, as_labeler=None) -> SessionReport:
    return session.close(now, as_labeler)
