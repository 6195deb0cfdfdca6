# vrsense/session/attributes.py

"""
Per-interval statistics and the forty volumetric attributes.

For each (transport, domain type) class: per-flow median and population
standard deviation of volume, packet count and mean packet size (A1-A24),
then host-level concurrent flows, new flows, volume and packet count
(A25-A40).
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from vrsense.capture.records import Transport
from vrsense.flowtable.table import FlowKey
from vrsense.session.states import DomainType

UPSTREAM_ONLY = "upstream"
BOTH_DIRECTIONS = "both"

ATTRIBUTE_CLASSES: List[Tuple[Transport, DomainType, str]] = [
    (Transport.TCP, DomainType.PRIMARY, "tcp_prim"),
    (Transport.TCP, DomainType.TIME_CRITICAL, "tcp_actv"),
    (Transport.UDP, DomainType.PRIMARY, "udp_prim"),
    (Transport.UDP, DomainType.TIME_CRITICAL, "udp_actv"),
]

ATTRIBUTE_NAMES: List[str] = (
    [f"{cls}_{stat}_{metric}"
     for _, _, cls in ATTRIBUTE_CLASSES
     for stat in ("mdn", "std")
     for metric in ("vol", "pkt_ct", "pkt_sz")]
    + [f"{cls}_{metric}"
       for _, _, cls in ATTRIBUTE_CLASSES
       for metric in ("#_cncr_flow", "#_new_flow", "vol", "pkt_ct")]
)
ATTRIBUTE_COLUMNS = [f"A{i}" for i in range(1, 41)]
HOST_LEVEL_SLICE = slice(24, 40)


@dataclass
class FlowIntervalCounters:
    transport: Transport
    domain_type: DomainType
    bytes_up: int = 0
    bytes_down: int = 0
    pkts_up: int = 0
    pkts_down: int = 0
    is_new: bool = False

    def volume(self, direction: str = UPSTREAM_ONLY) -> int:
        return self.bytes_up if direction == UPSTREAM_ONLY else self.bytes_up + self.bytes_down

    def packets(self, direction: str = UPSTREAM_ONLY) -> int:
        return self.pkts_up if direction == UPSTREAM_ONLY else self.pkts_up + self.pkts_down


@dataclass
class HostCounters:
    flows: int = 0
    new_flows: int = 0
    volume: int = 0
    packets: int = 0


@dataclass
class IntervalStats:
    """Counters for one half-open interval [start, end) of a session."""
    index: int
    start: float
    end: float
    flows: Dict[FlowKey, FlowIntervalCounters] = field(default_factory=dict)

    def flows_of(self, transport: Transport, domain_type: DomainType,
                 include_idle_flows: bool = True, direction: str = UPSTREAM_ONLY) -> List[FlowIntervalCounters]:
        return [c for c in self.flows.values()
                if c.transport is transport and c.domain_type is domain_type
                and (include_idle_flows or c.packets(direction) > 0)]

    def host_level(self, direction: str = UPSTREAM_ONLY,
                   include_idle_flows: bool = True) -> Dict[Tuple[Transport, DomainType], HostCounters]:
        totals = {}
        for transport, domain_type, _ in ATTRIBUTE_CLASSES:
            flows = self.flows_of(transport, domain_type, include_idle_flows, direction)
            totals[(transport, domain_type)] = HostCounters(
                flows=len(flows),
                new_flows=sum(1 for c in flows if c.is_new),
                volume=sum(c.volume(direction) for c in flows),
                packets=sum(c.packets(direction) for c in flows),
            )
        return totals

    @property
    def bytes_up(self) -> int:
        return sum(c.bytes_up for c in self.flows.values())

    @property
    def bytes_down(self) -> int:
        return sum(c.bytes_down for c in self.flows.values())


@dataclass(frozen=True)
class AttributeVector:
    values: Tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(ATTRIBUTE_NAMES):
            raise ValueError(f"attribute vector needs {len(ATTRIBUTE_NAMES)} entries, got {len(self.values)}")

    def __getitem__(self, item):
        if isinstance(item, str):
            if item.startswith("A") and item[1:].isdigit():
                return self.values[int(item[1:]) - 1]
            return self.values[ATTRIBUTE_NAMES.index(item)]
        return self.values[item]

    def __len__(self):
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def to_dict(self) -> Dict[str, float]:
        return dict(zip(ATTRIBUTE_COLUMNS, self.values))


def _median(values: np.ndarray) -> float:
    return float(np.median(values)) if values.size else 0.0


def _pstd(values: np.ndarray) -> float:
    return float(np.std(values)) if values.size > 1 else 0.0


def compute_attributes(stats: IntervalStats, direction: str = UPSTREAM_ONLY,
                       include_idle_flows: bool = True) -> AttributeVector:
    per_flow, host = [], []
    for transport, domain_type, _ in ATTRIBUTE_CLASSES:
        flows = stats.flows_of(transport, domain_type, include_idle_flows, direction)
        volumes = np.array([c.volume(direction) for c in flows], dtype=np.float64)
        packets = np.array([c.packets(direction) for c in flows], dtype=np.float64)
        sizes = np.divide(volumes, packets, out=np.zeros_like(volumes), where=packets > 0)

        per_flow.extend(_median(v) for v in (volumes, packets, sizes))
        per_flow.extend(_pstd(v) for v in (volumes, packets, sizes))
        host.extend([
            float(len(flows)),
            float(sum(1 for c in flows if c.is_new)),
            float(volumes.sum()),
            float(packets.sum()),
        ])
    return AttributeVector(tuple(per_flow + host))
