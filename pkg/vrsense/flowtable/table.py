# vrsense/flowtable/table.py

"""
Per-user, per-5-tuple flow accumulators for the detection stages.

A flow collects the payload sizes of its upstream packets while it is a
candidate (PENDING). Once the matcher decides, the sequence is frozen and
the flow only keeps volumetric counters.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Set, Tuple

from vrsense.capture.records import Direction, PacketRecord, TlsRecordKind, Transport
from vrsense.errors import TableCapacityExceeded

logger = logging.getLogger(__name__)

DEFAULT_K_MAX = 8
DEFAULT_IDLE_TIMEOUT_CANDIDATE = 60.0
DEFAULT_IDLE_TIMEOUT_TRACKED = 300.0
SEQ_MODULO = 2 ** 32


class MatchStatus(Enum):
    PENDING = "PENDING"
    MATCHED = "MATCHED"
    REJECTED = "REJECTED"


class FlowUpdate(Enum):
    CREATED = "created"
    APPENDED_SIZE = "appended_size"
    COUNTED_ONLY = "counted_only"
    IGNORED_RETRANSMIT = "ignored_retransmit"


@dataclass(frozen=True)
class FlowKey:
    """5-tuple oriented so that src is always the local (user) side."""
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    transport: Transport

    @classmethod
    def from_packet(cls, pkt: PacketRecord) -> "FlowKey":
        if pkt.direction is Direction.UPSTREAM:
            return cls(pkt.src_ip, pkt.dst_ip, pkt.src_port, pkt.dst_port, pkt.transport)
        return cls(pkt.dst_ip, pkt.src_ip, pkt.dst_port, pkt.src_port, pkt.transport)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "src_ip": self.src_ip, "dst_ip": self.dst_ip,
            "src_port": self.src_port, "dst_port": self.dst_port,
            "transport": self.transport.value,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FlowKey":
        return cls(data["src_ip"], data["dst_ip"], int(data["src_port"]), int(data["dst_port"]),
                   Transport(data["transport"]))

    def __str__(self):
        return f"{self.src_ip}:{self.src_port}->{self.dst_ip}:{self.dst_port}/{self.transport.value}"


@dataclass
class FlowState:
    key: FlowKey
    first_seen: float
    last_seen: float
    upstream_size_seq: List[int] = field(default_factory=list)
    match_status: MatchStatus = MatchStatus.PENDING
    match_label: Any = None
    pkts_up: int = 0
    pkts_down: int = 0
    bytes_up: int = 0
    bytes_down: int = 0
    next_expected_seq: Optional[int] = None
    rtt_estimate: Optional[float] = None
    # handshake timing for RTT; cleared once used
    syn_ts: Optional[float] = None
    hello_ts: Optional[float] = None
    # TCP sequence numbers already appended while PENDING
    seen_seqs: Set[int] = field(default_factory=set)

    @property
    def user_ip(self) -> str:
        return self.key.src_ip

    @property
    def is_candidate(self) -> bool:
        return self.match_status is not MatchStatus.MATCHED

    def to_log(self) -> Dict[str, Any]:
        return {
            "key": self.key.to_dict(),
            "user": self.user_ip,
            "status": self.match_status.value,
            "label": self.match_label.to_dict() if hasattr(self.match_label, "to_dict") else self.match_label,
            "first_seen": self.first_seen,
            "last_seen": self.last_seen,
            "pkts_up": self.pkts_up,
            "pkts_down": self.pkts_down,
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
            "rtt_ms": self.rtt_estimate,
        }


def estimate_rtt(flow: FlowState, pkt: PacketRecord) -> Optional[float]:
    """
    Passive handshake RTT in milliseconds: SYN -> SYN-ACK, refreshed by
    client hello -> first server payload. UDP flows never get an estimate.
    """
    if pkt.transport is not Transport.TCP or flow.key.transport is not Transport.TCP:
        return None
    upstream = pkt.direction is Direction.UPSTREAM
    if upstream and pkt.is_syn:
        # a retransmitted SYN keeps the first timestamp
        if flow.syn_ts is None:
            flow.syn_ts = pkt.timestamp
    elif not upstream and pkt.is_syn_ack and flow.syn_ts is not None:
        flow.rtt_estimate = (pkt.timestamp - flow.syn_ts) * 1000.0
        flow.syn_ts = None

    if upstream and pkt.tls is not None and pkt.tls.record_kind is TlsRecordKind.CLIENT_HELLO:
        flow.hello_ts = pkt.timestamp
    elif not upstream and pkt.payload_len > 0 and flow.hello_ts is not None:
        flow.rtt_estimate = (pkt.timestamp - flow.hello_ts) * 1000.0
        flow.hello_ts = None
    return flow.rtt_estimate


class FlowTable:
    """
    Two-level map user_ip -> (FlowKey -> FlowState).

    A table is owned by exactly one worker; other workers only ever see
    ``snapshot()`` copies.
    """

    def __init__(self, k_max=DEFAULT_K_MAX, idle_timeout_candidate=DEFAULT_IDLE_TIMEOUT_CANDIDATE,
                 idle_timeout_tracked=DEFAULT_IDLE_TIMEOUT_TRACKED, max_flows=1_000_000):
        self.k_max = k_max
        self.idle_timeout_candidate = idle_timeout_candidate
        self.idle_timeout_tracked = idle_timeout_tracked
        self.max_flows = max_flows
        self.users: Dict[str, Dict[FlowKey, FlowState]] = {}
        self.size = 0
        self.dropped = 0

    def __len__(self):
        return self.size

    def lookup(self, key: FlowKey) -> Optional[FlowState]:
        return self.users.get(key.src_ip, {}).get(key)

    def flows_for_user(self, user_ip: str) -> List[FlowState]:
        return list(self.users.get(user_ip, {}).values())

    def upsert(self, pkt: PacketRecord, now: Optional[float] = None) -> Tuple[FlowUpdate, FlowState]:
        if pkt.transport not in (Transport.TCP, Transport.UDP):
            raise ValueError(f"flow table only tracks TCP/UDP, got {pkt.transport.value}")
        now = pkt.timestamp if now is None else now
        key = FlowKey.from_packet(pkt)
        flows = self.users.get(key.src_ip)
        state = flows.get(key) if flows else None

        created = state is None
        if created:
            if self.size >= self.max_flows:
                self.dropped += 1
                raise TableCapacityExceeded(f"flow table full ({self.max_flows} entries), dropping {key}")
            state = FlowState(key=key, first_seen=pkt.timestamp, last_seen=pkt.timestamp)
            self.users.setdefault(key.src_ip, {})[key] = state
            self.size += 1

        state.last_seen = max(state.last_seen, pkt.timestamp)
        upstream = pkt.direction is Direction.UPSTREAM
        if upstream:
            state.pkts_up += 1
            state.bytes_up += pkt.payload_len
        else:
            state.pkts_down += 1
            state.bytes_down += pkt.payload_len
        estimate_rtt(state, pkt)

        update = self._append_size(state, pkt) if upstream else FlowUpdate.COUNTED_ONLY
        return (FlowUpdate.CREATED if created else update), state

    def _append_size(self, state: FlowState, pkt: PacketRecord) -> FlowUpdate:
        if pkt.payload_len <= 0 or pkt.fragment or state.match_status is not MatchStatus.PENDING:
            return FlowUpdate.COUNTED_ONLY
        if len(state.upstream_size_seq) >= self.k_max:
            return FlowUpdate.COUNTED_ONLY
        if pkt.transport is Transport.TCP and pkt.tcp_seq is not None:
            if pkt.tcp_seq in state.seen_seqs:
                return FlowUpdate.IGNORED_RETRANSMIT
            state.seen_seqs.add(pkt.tcp_seq)
            state.next_expected_seq = (pkt.tcp_seq + pkt.payload_len) % SEQ_MODULO
        state.upstream_size_seq.append(pkt.payload_len)
        return FlowUpdate.APPENDED_SIZE

    def mark_matched(self, state: FlowState, label) -> bool:
        if state.match_status is not MatchStatus.PENDING:
            return False
        state.match_status = MatchStatus.MATCHED
        state.match_label = label
        state.seen_seqs.clear()
        return True

    def mark_rejected(self, state: FlowState) -> bool:
        if state.match_status is not MatchStatus.PENDING:
            return False
        state.match_status = MatchStatus.REJECTED
        state.seen_seqs.clear()
        return True

    def remove(self, key: FlowKey) -> Optional[FlowState]:
        flows = self.users.get(key.src_ip)
        if not flows or key not in flows:
            return None
        state = flows.pop(key)
        if not flows:
            del self.users[key.src_ip]
        self.size -= 1
        return state

    def evict_idle(self, now: float) -> List[FlowState]:
        evicted = []
        for user_ip in list(self.users):
            flows = self.users[user_ip]
            for key in list(flows):
                state = flows[key]
                timeout = (self.idle_timeout_tracked if state.match_status is MatchStatus.MATCHED
                           else self.idle_timeout_candidate)
                if now - state.last_seen > timeout:
                    evicted.append(flows.pop(key))
            if not flows:
                del self.users[user_ip]
        self.size -= len(evicted)
        if evicted:
            logger.debug(f"Evicted {len(evicted)} idle flows at {now:.3f}")
        return evicted

    def drain(self) -> List[FlowState]:
        """Remove and return every flow (end of stream)."""
        drained = [state for flows in self.users.values() for state in flows.values()]
        self.users.clear()
        self.size = 0
        return drained

    def snapshot(self) -> List[Dict[str, Any]]:
        return [state.to_log() for flows in self.users.values() for state in flows.values()]


def upsert_packet(table: FlowTable, pkt: PacketRecord, now: Optional[float] = None) -> FlowUpdate:
    return table.upsert(pkt, now)[0]


def evict_idle(table: FlowTable, now: float) -> List[FlowState]:
    return table.evict_idle(now)
