# vrsense/capture/records.py

"""
Normalized packet records and the capture-source descriptor.

Records are immutable once built, so a reader can hand them to any
downstream worker.
"""

import ipaddress
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Iterable, List, Optional, Tuple

from vrsense.errors import ConfigError

logger = logging.getLogger(__name__)


class Transport(Enum):
    TCP = "TCP"
    UDP = "UDP"
    OTHER = "OTHER"


class Direction(Enum):
    UPSTREAM = "UPSTREAM"
    DOWNSTREAM = "DOWNSTREAM"


class TlsRecordKind(Enum):
    CLIENT_HELLO = "CLIENT_HELLO"
    OTHER_HANDSHAKE = "OTHER_HANDSHAKE"
    APP_DATA = "APP_DATA"
    NONE = "NONE"


class SourceKind(Enum):
    FILE = "FILE"
    LIVE = "LIVE"


class LinkType(Enum):
    ETHERNET = "ETHERNET"
    RAW_IP = "RAW_IP"


# pcap link-layer header values we accept
PCAP_LINKTYPES = {
    1: LinkType.ETHERNET,
    12: LinkType.RAW_IP,
    14: LinkType.RAW_IP,
    101: LinkType.RAW_IP,
}
PCAP_LINKTYPE_FOR = {LinkType.ETHERNET: 1, LinkType.RAW_IP: 101}

# TCP flag bits
TH_FIN = 0x01
TH_SYN = 0x02
TH_RST = 0x04
TH_ACK = 0x10


@dataclass(frozen=True)
class TlsMeta:
    record_kind: TlsRecordKind = TlsRecordKind.NONE
    sni: Optional[str] = None

    def __post_init__(self):
        if self.sni is not None and (self.record_kind is not TlsRecordKind.CLIENT_HELLO or not self.sni):
            raise ValueError("sni is only carried by a client hello and never empty")


@dataclass(frozen=True)
class PacketRecord:
    """One parsed packet. payload_len excludes link, IP and transport headers."""
    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    transport: Transport
    direction: Direction
    payload_len: int
    tcp_seq: Optional[int] = None
    tcp_flags: int = 0
    tls: Optional[TlsMeta] = None
    internal: bool = False
    # Non-first IP fragment: counted into volume, never into size sequences.
    fragment: bool = False

    @property
    def user_ip(self) -> str:
        return self.src_ip if self.direction is Direction.UPSTREAM else self.dst_ip

    @property
    def is_syn(self) -> bool:
        return bool(self.tcp_flags & TH_SYN) and not self.tcp_flags & TH_ACK

    @property
    def is_syn_ack(self) -> bool:
        return bool(self.tcp_flags & TH_SYN) and bool(self.tcp_flags & TH_ACK)


def parse_prefixes(prefixes) -> Tuple[ipaddress._BaseNetwork, ...]:
    """Accept a comma string or an iterable of CIDR strings/networks."""
    if isinstance(prefixes, str):
        prefixes = [p for p in (s.strip() for s in prefixes.split(",")) if p]
    try:
        parsed = tuple(ipaddress.ip_network(p, strict=False) for p in prefixes)
    except ValueError as e:
        raise ConfigError(f"Invalid local prefix: {e}")
    if not parsed:
        raise ConfigError("At least one local prefix is required for direction inference")
    return parsed


@dataclass
class CaptureSource:
    """
    Where packets come from.

    FILE sources read ``path`` (the link type then comes from the pcap
    header). LIVE sources take ``frames``: anything yielding
    ``(timestamp, raw_frame_bytes)`` tuples, decoded with ``link_type``.
    """
    kind: SourceKind
    local_prefixes: Tuple = field(default_factory=tuple)
    link_type: LinkType = LinkType.ETHERNET
    path: Optional[str] = None
    frames: Optional[Iterable] = None

    def __post_init__(self):
        self.local_prefixes = parse_prefixes(self.local_prefixes)
        if self.kind is SourceKind.FILE and not self.path:
            raise ConfigError("A FILE capture source needs a path")
        if self.kind is SourceKind.LIVE and self.frames is None:
            raise ConfigError("A LIVE capture source needs a frame iterator")

    @classmethod
    def from_file(cls, path, local_prefixes):
        return cls(kind=SourceKind.FILE, local_prefixes=local_prefixes, path=str(path))

    @classmethod
    def from_frames(cls, frames, local_prefixes, link_type=LinkType.ETHERNET):
        return cls(kind=SourceKind.LIVE, local_prefixes=local_prefixes, link_type=link_type, frames=frames)


@lru_cache(maxsize=65536)
def is_local(ip: str, local_prefixes: Tuple) -> bool:
    addr = ipaddress.ip_address(ip)
    return any(addr.version == net.version and addr in net for net in local_prefixes)


def classify_direction(src_ip: str, dst_ip: str, local_prefixes: Tuple) -> Direction:
    """UPSTREAM iff src_ip lies in a local prefix (local-to-local is UPSTREAM too)."""
    if not local_prefixes:
        raise ConfigError("At least one local prefix is required for direction inference")
    return Direction.UPSTREAM if is_local(src_ip, tuple(local_prefixes)) else Direction.DOWNSTREAM


def is_internal(src_ip: str, dst_ip: str, local_prefixes: Tuple) -> bool:
    prefixes = tuple(local_prefixes)
    return is_local(src_ip, prefixes) and is_local(dst_ip, prefixes)
