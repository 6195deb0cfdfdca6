# vrsense/synth/packets.py

"""
Frame construction and pcap emission for generated traffic.

Timestamps are integer microseconds throughout so a written pcap reads back
to exactly the same logical stream.
"""

import heapq
import logging
import socket
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Tuple

import dpkt

from vrsense.capture.records import PCAP_LINKTYPE_FOR, TH_ACK, TH_FIN, TH_SYN, LinkType, Transport
from vrsense.errors import SynthError
from vrsense.flowtable.table import FlowKey

logger = logging.getLogger(__name__)

USER_MAC = b"\x02\x00\x00\x00\x00\x01"
GATEWAY_MAC = b"\x02\x00\x00\x00\x00\xfe"
TH_PUSH = 0x08
SEQ_MODULO = 2 ** 32
SNAPLEN = 65535
MSS = 1400


class Frame(NamedTuple):
    ts_us: int
    data: bytes

    @property
    def timestamp(self) -> float:
        return self.ts_us / 1_000_000


def to_us(seconds: float) -> int:
    return int(round(seconds * 1_000_000))


def build_frame(src_ip: str, dst_ip: str, sport: int, dport: int, transport: Transport, payload: bytes,
                seq: int = 0, ack: int = 0, flags: int = TH_ACK, upstream: bool = True) -> bytes:
    if transport is Transport.TCP:
        l4 = dpkt.tcp.TCP(sport=sport, dport=dport, seq=seq, ack=ack, flags=flags, win=65535, data=payload)
        proto = dpkt.ip.IP_PROTO_TCP
    else:
        l4 = dpkt.udp.UDP(sport=sport, dport=dport, data=payload)
        l4.ulen = 8 + len(payload)
        proto = dpkt.ip.IP_PROTO_UDP

    if ":" in src_ip:
        ip = dpkt.ip6.IP6(src=socket.inet_pton(socket.AF_INET6, src_ip),
                          dst=socket.inet_pton(socket.AF_INET6, dst_ip), nxt=proto, hlim=64, data=l4)
        ip.plen = len(l4)
        eth_type = dpkt.ethernet.ETH_TYPE_IP6
    else:
        ip = dpkt.ip.IP(src=socket.inet_aton(src_ip), dst=socket.inet_aton(dst_ip), p=proto, ttl=64, data=l4)
        ip.len = ip.__hdr_len__ + len(l4)
        eth_type = dpkt.ethernet.ETH_TYPE_IP
    src_mac, dst_mac = (USER_MAC, GATEWAY_MAC) if upstream else (GATEWAY_MAC, USER_MAC)
    return bytes(dpkt.ethernet.Ethernet(src=src_mac, dst=dst_mac, type=eth_type, data=ip))


class _Event(NamedTuple):
    ts_us: int
    order: int
    upstream: bool
    payload: bytes
    flags: int


class FlowEmitter:
    """
    Collects the packets of one flow and renders them in time order. Equal
    timestamps are pushed apart by 1 us so a flow's packets are strictly
    increasing in time.
    """

    def __init__(self, client_ip: str, client_port: int, server_ip: str, server_port: int,
                 transport: Transport, isn_client: int = 0, isn_server: int = 0):
        self.client_ip = client_ip
        self.client_port = client_port
        self.server_ip = server_ip
        self.server_port = server_port
        self.transport = transport
        self.isn_client = isn_client
        self.isn_server = isn_server
        self.events: List[_Event] = []
        self.first_us: Optional[int] = None
        self.last_us: Optional[int] = None

    @property
    def key(self) -> FlowKey:
        return FlowKey(self.client_ip, self.server_ip, self.client_port, self.server_port, self.transport)

    def up(self, ts_us: int, payload: bytes = b"", flags: int = TH_ACK | TH_PUSH) -> None:
        self.events.append(_Event(int(ts_us), len(self.events), True, payload, flags))

    def down(self, ts_us: int, payload: bytes = b"", flags: int = TH_ACK | TH_PUSH) -> None:
        self.events.append(_Event(int(ts_us), len(self.events), False, payload, flags))

    def tcp_open(self, ts_us: int, rtt_us: int) -> int:
        """SYN, SYN-ACK one RTT later, then the client's ACK. Returns the ACK time."""
        self.up(ts_us, flags=TH_SYN)
        self.down(ts_us + rtt_us, flags=TH_SYN | TH_ACK)
        self.up(ts_us + rtt_us + 50, flags=TH_ACK)
        return ts_us + rtt_us + 50

    def tcp_close(self, ts_us: int, rtt_us: int) -> None:
        self.up(ts_us, flags=TH_FIN | TH_ACK)
        self.down(ts_us + rtt_us, flags=TH_FIN | TH_ACK)

    def render(self, until_us: Optional[int] = None) -> List[Frame]:
        frames = []
        client_next = self.isn_client
        server_next = self.isn_server
        last = None
        for event in sorted(self.events, key=lambda e: (e.ts_us, e.order)):
            ts = event.ts_us if last is None or event.ts_us > last else last + 1
            if until_us is not None and ts >= until_us:
                break
            last = ts
            if self.transport is Transport.TCP:
                if event.upstream:
                    seq, ack = client_next, server_next
                else:
                    seq, ack = server_next, client_next
                advance = len(event.payload) + (1 if event.flags & (TH_SYN | TH_FIN) else 0)
                if event.upstream:
                    client_next = (client_next + advance) % SEQ_MODULO
                else:
                    server_next = (server_next + advance) % SEQ_MODULO
            else:
                seq = ack = 0
            if event.upstream:
                data = build_frame(self.client_ip, self.server_ip, self.client_port, self.server_port,
                                   self.transport, event.payload, seq, ack, event.flags, upstream=True)
            else:
                data = build_frame(self.server_ip, self.client_ip, self.server_port, self.client_port,
                                   self.transport, event.payload, seq, ack, event.flags, upstream=False)
            frames.append(Frame(ts, data))
        if frames:
            self.first_us, self.last_us = frames[0].ts_us, frames[-1].ts_us
        return frames


def merge_streams(*streams: Iterable[Frame]) -> List[Frame]:
    """Merge time-sorted streams; equal timestamps keep argument order."""
    return list(heapq.merge(*streams, key=lambda f: f.ts_us))


def emit_pcap(stream: Iterable, path, link_type: LinkType = LinkType.ETHERNET) -> Path:
    """
    Write a little-endian microsecond pcap. Accepts Frames or
    ``(timestamp seconds, bytes)`` tuples.
    """
    path = Path(path)
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as fh:
            fh.write(bytes(dpkt.pcap.LEFileHdr(snaplen=SNAPLEN, linktype=PCAP_LINKTYPE_FOR[link_type])))
            for item in stream:
                ts_us = item.ts_us if isinstance(item, Frame) else to_us(item[0])
                data = item[1]
                sec, usec = divmod(ts_us, 1_000_000)
                fh.write(bytes(dpkt.pcap.LEPktHdr(tv_sec=sec, tv_usec=usec, caplen=len(data), len=len(data))))
                fh.write(data)
                count += 1
    except OSError as e:
        raise SynthError(f"Cannot write pcap {path}: {e}", code="IO_FAILURE")
    logger.info(f"Wrote {count} frames to {path}")
    return path


def frames_as_source(frames: Iterable[Frame]) -> Iterable[Tuple[float, bytes]]:
    """Adapt generated frames to a live CaptureSource."""
    for frame in frames:
        yield frame.timestamp, frame.data
