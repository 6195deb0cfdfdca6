# vrsense/capture/pcap_reader.py

"""
Capture ingestion: pcap files and live frame sources.

File framing is walked record by record with dpkt's header classes so a
short final record can be reported as a warning instead of aborting the
stream. Frame decoding (Ethernet / 802.1Q / IPv4 / IPv6 / TCP / UDP) is
done with dpkt, as for live frames.
"""

import logging
import socket
import struct
from collections import OrderedDict
from dataclasses import dataclass, asdict
from typing import Iterator, List, Optional

import dpkt

from vrsense.capture.records import (
    CaptureSource, Direction, LinkType, PacketRecord, PCAP_LINKTYPES, SourceKind,
    TlsRecordKind, Transport, classify_direction, is_internal, parse_prefixes,
)
from vrsense.capture.tls import parse_tls_client_hello
from vrsense.errors import CaptureError

logger = logging.getLogger(__name__)

# (packet header class, nanosecond resolution) keyed by the magic as read big-endian
_MAGICS = {
    dpkt.pcap.TCPDUMP_MAGIC: (dpkt.pcap.FileHdr, dpkt.pcap.PktHdr, False),
    dpkt.pcap.TCPDUMP_MAGIC_NANO: (dpkt.pcap.FileHdr, dpkt.pcap.PktHdr, True),
    dpkt.pcap.PMUDPCT_MAGIC: (dpkt.pcap.LEFileHdr, dpkt.pcap.LEPktHdr, False),
    dpkt.pcap.PMUDPCT_MAGIC_NANO: (dpkt.pcap.LEFileHdr, dpkt.pcap.LEPktHdr, True),
}

FILE_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
IP_OFFMASK = 0x1FFF
IP_MF = 0x2000
FRAGMENT_CACHE_SIZE = 4096


@dataclass
class CaptureStats:
    frames: int = 0
    records: int = 0
    non_ip: int = 0
    unsupported_vlan: int = 0
    undecodable: int = 0
    truncated: int = 0

    def to_dict(self):
        return asdict(self)


def inet_to_str(addr: bytes) -> str:
    family = socket.AF_INET if len(addr) == 4 else socket.AF_INET6
    return socket.inet_ntop(family, addr)


class FrameDecoder:
    """
    Turns raw link-layer frames into PacketRecords.

    Holds the small amount of cross-frame state decoding needs: the ports of
    first IPv4 fragments, so later fragments can be attributed to a flow.
    """

    def __init__(self, local_prefixes, stats: Optional[CaptureStats] = None):
        self.local_prefixes = parse_prefixes(local_prefixes)
        self.stats = stats if stats is not None else CaptureStats()
        self._fragments = OrderedDict()

    def decode(self, ts: float, frame: bytes, link_type: LinkType) -> Optional[PacketRecord]:
        self.stats.frames += 1
        try:
            ip = self._network_layer(frame, link_type)
            if ip is None:
                return None
            record = self._transport_layer(ts, ip)
        except (dpkt.UnpackError, IndexError, ValueError, struct.error) as e:
            self.stats.undecodable += 1
            logger.debug(f"Undecodable frame at {ts}: {e}")
            return None
        if record is not None:
            self.stats.records += 1
        return record

    def _network_layer(self, frame: bytes, link_type: LinkType):
        if link_type is LinkType.ETHERNET:
            eth = dpkt.ethernet.Ethernet(frame)
            if len(getattr(eth, "vlan_tags", None) or ()) > 1:
                self.stats.unsupported_vlan += 1
                return None
            ip = eth.data
        else:
            version = frame[0] >> 4 if frame else 0
            if version == 4:
                ip = dpkt.ip.IP(frame)
            elif version == 6:
                ip = dpkt.ip6.IP6(frame)
            else:
                ip = None
        if not isinstance(ip, (dpkt.ip.IP, dpkt.ip6.IP6)):
            self.stats.non_ip += 1
            return None
        return ip

    def _transport_layer(self, ts: float, ip) -> PacketRecord:
        src_ip, dst_ip = inet_to_str(ip.src), inet_to_str(ip.dst)
        direction = classify_direction(src_ip, dst_ip, self.local_prefixes)
        internal = direction is Direction.UPSTREAM and is_internal(src_ip, dst_ip, self.local_prefixes)

        if isinstance(ip, dpkt.ip.IP):
            ip_payload = (ip.len - ip.hl * 4) if ip.len else len(ip.data)
            offset = ip.off & IP_OFFMASK
            l4 = ip.data
            if offset:
                return self._later_fragment(ts, ip, src_ip, dst_ip, direction, internal)
            if isinstance(l4, bytes) and ip.off & IP_MF:
                l4 = self._first_fragment(ip, l4)
        else:
            ip_payload = None
            l4 = ip.data

        fields = dict(
            timestamp=ts, src_ip=src_ip, dst_ip=dst_ip, direction=direction, internal=internal,
        )
        if isinstance(l4, dpkt.tcp.TCP):
            header_len = l4.off * 4
            payload_len = ip_payload - header_len if ip_payload is not None else len(l4.data)
            payload = bytes(l4.data)
            tls = None
            if payload:
                meta = parse_tls_client_hello(payload)
                tls = meta if meta.record_kind is not TlsRecordKind.NONE else None
            return PacketRecord(
                src_port=l4.sport, dst_port=l4.dport, transport=Transport.TCP,
                payload_len=max(0, payload_len), tcp_seq=l4.seq, tcp_flags=l4.flags, tls=tls, **fields,
            )
        if isinstance(l4, dpkt.udp.UDP):
            if ip_payload is not None:
                payload_len = ip_payload - 8
            else:
                payload_len = l4.ulen - 8 if l4.ulen else len(l4.data)
            return PacketRecord(
                src_port=l4.sport, dst_port=l4.dport, transport=Transport.UDP,
                payload_len=max(0, payload_len), **fields,
            )
        payload_len = ip_payload if ip_payload is not None else len(bytes(ip.data))
        return PacketRecord(
            src_port=0, dst_port=0, transport=Transport.OTHER, payload_len=max(0, payload_len), **fields,
        )

    def _first_fragment(self, ip, raw: bytes):
        if ip.p == dpkt.ip.IP_PROTO_TCP:
            l4 = dpkt.tcp.TCP(raw)
            transport = Transport.TCP
        elif ip.p == dpkt.ip.IP_PROTO_UDP:
            l4 = dpkt.udp.UDP(raw[:8])
            transport = Transport.UDP
        else:
            return raw
        self._fragments[(ip.src, ip.dst, ip.id, ip.p)] = (l4.sport, l4.dport, transport)
        if len(self._fragments) > FRAGMENT_CACHE_SIZE:
            self._fragments.popitem(last=False)
        return l4

    def _later_fragment(self, ts, ip, src_ip, dst_ip, direction, internal) -> PacketRecord:
        sport, dport, transport = self._fragments.get(
            (ip.src, ip.dst, ip.id, ip.p), (0, 0, Transport.OTHER)
        )
        return PacketRecord(
            timestamp=ts, src_ip=src_ip, dst_ip=dst_ip, src_port=sport, dst_port=dport,
            transport=transport, direction=direction, internal=internal,
            payload_len=max(0, ip.len - ip.hl * 4), fragment=True,
        )


class CaptureReader:
    """
    Iterator over the PacketRecords of one source.

    Use as a context manager or just iterate; the file is closed when the
    iteration finishes.
    """

    def __init__(self, source: CaptureSource):
        self.source = source
        self.stats = CaptureStats()
        self.decoder = FrameDecoder(source.local_prefixes, self.stats)
        self.link_type = source.link_type
        self._fh = None
        self._pkt_hdr = None
        self._nano = False
        if source.kind is SourceKind.FILE:
            self._open_file(source.path)

    def _open_file(self, path):
        try:
            self._fh = open(path, "rb")
        except OSError as e:
            raise CaptureError(f"Cannot open capture {path}: {e}")
        header = self._fh.read(FILE_HEADER_LEN)
        if len(header) < FILE_HEADER_LEN:
            self.close()
            raise CaptureError(f"Capture {path} is shorter than a pcap global header")
        magic = dpkt.pcap.FileHdr(header).magic
        if magic not in _MAGICS:
            self.close()
            raise CaptureError(f"Capture {path} has unknown magic 0x{magic:08x}")
        file_hdr_cls, self._pkt_hdr, self._nano = _MAGICS[magic]
        linktype = file_hdr_cls(header).linktype
        if linktype not in PCAP_LINKTYPES:
            self.close()
            raise CaptureError(f"Unsupported link type {linktype} in {path}", code="UNSUPPORTED_LINK_TYPE")
        self.link_type = PCAP_LINKTYPES[linktype]
        logger.info(f"Opened capture {path} (link type {self.link_type.value}, nano={self._nano})")

    def frames(self) -> Iterator:
        """Yield raw ``(timestamp, frame)`` tuples from the source."""
        if self.source.kind is SourceKind.LIVE:
            yield from self.source.frames
            return
        divisor = 1_000_000_000 if self._nano else 1_000_000
        while True:
            header = self._fh.read(RECORD_HEADER_LEN)
            if not header:
                return
            if len(header) < RECORD_HEADER_LEN:
                self._truncated()
                return
            hdr = self._pkt_hdr(header)
            frame = self._fh.read(hdr.caplen)
            if len(frame) < hdr.caplen:
                self._truncated()
                return
            yield (hdr.tv_sec * divisor + hdr.tv_usec) / divisor, frame

    def _truncated(self):
        self.stats.truncated += 1
        logger.warning(
            f"TRUNCATED_FRAME: capture {self.source.path} ends mid-record after {self.stats.frames} frames"
        )

    def __iter__(self) -> Iterator[PacketRecord]:
        try:
            for ts, frame in self.frames():
                record = self.decoder.decode(ts, frame, self.link_type)
                if record is not None:
                    yield record
        finally:
            self.close()
        skipped = self.stats.non_ip + self.stats.unsupported_vlan + self.stats.undecodable
        if skipped:
            logger.info(f"Skipped {skipped} frames ({self.stats.to_dict()})")

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_capture(source) -> CaptureReader:
    """Open a file or live CaptureSource and return an iterator of PacketRecords."""
    if not isinstance(source, CaptureSource):
        raise TypeError("open_capture expects a CaptureSource")
    return CaptureReader(source)


def read_records(path, local_prefixes) -> List[PacketRecord]:
    return list(open_capture(CaptureSource.from_file(path, local_prefixes)))
