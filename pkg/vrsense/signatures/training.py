# vrsense/signatures/training.py

"""
Offline signature extraction from labelled captures.

Primary signatures come from TLS flows whose client-hello SNI belongs to the
app's primary domain: the upstream payload sizes from the client hello up to
and including the first application-data packet. UDP signatures are the
first few upstream payload sizes of flows on the pre-listed ports.
"""

import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from vrsense.capture.pcap_reader import read_records
from vrsense.capture.records import Direction, PacketRecord, TlsRecordKind, Transport
from vrsense.errors import SignatureTrainingError
from vrsense.flowtable.table import DEFAULT_K_MAX, FlowKey
from vrsense.signatures.model import (
    PRIMARY_SEQ_LEN, UDP_SEQ_LEN, PrimarySignature, SignatureSet, UdpSignature,
)
from vrsense.signatures.taxonomy import categorize_sni, sni_prefix

logger = logging.getLogger(__name__)

DEFAULT_HS_WINDOW = 30.0


@dataclass
class LabeledCapture:
    """
    One training session: a capture (path or already-decoded records) plus
    its metaverse label and, when known, the end of the initial HS state.
    """
    metaverse: str
    path: Optional[str] = None
    records: Optional[List[PacketRecord]] = None
    hs_end: Optional[float] = None
    local_prefixes: Sequence[str] = ("10.0.0.0/8",)

    def load(self) -> List[PacketRecord]:
        if self.records is None:
            self.records = read_records(self.path, self.local_prefixes)
        return self.records


@dataclass
class PrimaryTrainingResult:
    metaverse: str
    domain: str
    signatures: List[PrimarySignature] = field(default_factory=list)
    prefix_order: List[str] = field(default_factory=list)
    categories: Dict[str, int] = field(default_factory=dict)


def _flows(records: Iterable[PacketRecord], transport: Transport) -> "OrderedDict[FlowKey, List[PacketRecord]]":
    flows = OrderedDict()
    for pkt in records:
        if pkt.transport is transport:
            flows.setdefault(FlowKey.from_packet(pkt), []).append(pkt)
    return flows


def handshake_sequence(packets: List[PacketRecord], k_max: int = DEFAULT_K_MAX) -> Optional[Tuple[float, List[int]]]:
    """
    (client hello time, sizes through the first upstream application-data
    packet) for one TCP flow, or None when the handshake is incomplete.
    """
    sizes, seen_seqs, hello_ts = [], set(), None
    for pkt in packets:
        if pkt.direction is not Direction.UPSTREAM or pkt.payload_len <= 0 or pkt.fragment:
            continue
        kind = pkt.tls.record_kind if pkt.tls else TlsRecordKind.NONE
        if hello_ts is None:
            if kind is not TlsRecordKind.CLIENT_HELLO:
                continue
            hello_ts = pkt.timestamp
        if pkt.tcp_seq is not None:
            if pkt.tcp_seq in seen_seqs:
                continue
            seen_seqs.add(pkt.tcp_seq)
        sizes.append(pkt.payload_len)
        if kind is TlsRecordKind.APP_DATA:
            return hello_ts, sizes
        if len(sizes) >= k_max:
            return None
    return None


def _client_hello_sni(packets: List[PacketRecord]) -> Optional[str]:
    for pkt in packets:
        if (pkt.direction is Direction.UPSTREAM and pkt.tls is not None
                and pkt.tls.record_kind is TlsRecordKind.CLIENT_HELLO):
            return pkt.tls.sni
    return None


def train_primary_signatures(captures: List[LabeledCapture], primary_domain: str,
                             k_max: int = DEFAULT_K_MAX,
                             hs_window: float = DEFAULT_HS_WINDOW) -> PrimaryTrainingResult:
    if not captures:
        raise SignatureTrainingError("No training captures given", code="NO_PRIMARY_FLOWS")
    metaverse = captures[0].metaverse
    result = PrimaryTrainingResult(metaverse=metaverse, domain=primary_domain)
    families: "OrderedDict[Tuple[str, Tuple[int, ...]], None]" = OrderedDict()
    orders: List[Tuple[str, ...]] = []
    categories = Counter()

    for capture in captures:
        observed = []
        for packets in _flows(capture.load(), Transport.TCP).values():
            sni = _client_hello_sni(packets)
            if sni is None:
                continue
            categories[categorize_sni(sni, primary_domain).value] += 1
            prefix = sni_prefix(sni, primary_domain)
            if prefix is None:
                continue
            handshake = handshake_sequence(packets, k_max)
            if handshake is None:
                logger.debug(f"Skipping incomplete handshake to {sni}")
                continue
            hello_ts, sizes = handshake
            lo, hi = PRIMARY_SEQ_LEN
            if not lo <= len(sizes) <= hi:
                logger.warning(f"Handshake to {sni} has {len(sizes)} sizes, outside {lo}-{hi}; skipped")
                continue
            observed.append((hello_ts, prefix, tuple(sizes)))

        if not observed:
            logger.warning(f"No {primary_domain} handshakes in capture {capture.path or '<memory>'}")
            continue
        observed.sort(key=lambda item: item[0])
        for _, prefix, sizes in observed:
            families.setdefault((prefix, sizes), None)

        window_end = capture.hs_end if capture.hs_end is not None else observed[0][0] + hs_window
        order = []
        for hello_ts, prefix, _ in observed:
            if hello_ts <= window_end and prefix not in order:
                order.append(prefix)
        orders.append(tuple(order))

    if not families:
        raise SignatureTrainingError(f"No TLS flows to {primary_domain} in the training corpus",
                                     code="NO_PRIMARY_FLOWS")

    prefix_sets = {frozenset(order) for order in orders}
    if len(prefix_sets) > 1:
        raise SignatureTrainingError(
            f"Sessions disagree on the initial prefix set for {metaverse}: "
            f"{sorted(sorted(s) for s in prefix_sets)}",
            code="INCONSISTENT_PREFIX_ORDER",
        )
    votes = Counter(orders)
    best = max(votes.values())
    result.prefix_order = list(next(order for order in orders if votes[order] == best))
    result.signatures = [PrimarySignature(metaverse, primary_domain, prefix, sizes)
                         for prefix, sizes in families]
    result.categories = dict(categories)
    logger.info(f"Trained {len(result.signatures)} primary signatures for {metaverse}, "
                f"prefix order {result.prefix_order} over {len(orders)} sessions")
    return result


def train_udp_signatures(captures: List[LabeledCapture], port_list: Sequence[int],
                         signature_length: Optional[int] = None) -> List[UdpSignature]:
    """
    First n upstream payload sizes per (port, flow). Without a configured n,
    each port uses the shortest length in [4, 7] that keeps every metaverse's
    sequences disjoint from the others'.
    """
    lo, hi = UDP_SEQ_LEN
    per_port: Dict[int, List[Tuple[str, Tuple[int, ...]]]] = {}
    for capture in captures:
        for key, packets in _flows(capture.load(), Transport.UDP).items():
            if key.dst_port not in port_list:
                continue
            sizes = [p.payload_len for p in packets
                     if p.direction is Direction.UPSTREAM and p.payload_len > 0 and not p.fragment][:hi]
            if len(sizes) >= lo:
                per_port.setdefault(key.dst_port, []).append((capture.metaverse, tuple(sizes)))

    signatures = []
    for port in sorted(per_port):
        flows = per_port[port]
        lengths = [signature_length] if signature_length else list(range(lo, hi + 1))
        chosen, conflict = None, None
        for n in lengths:
            owners: Dict[Tuple[int, ...], str] = {}
            conflict = None
            for metaverse, sizes in flows:
                if len(sizes) < n:
                    continue
                seq = sizes[:n]
                if owners.setdefault(seq, metaverse) != metaverse:
                    conflict = (seq, owners[seq], metaverse)
                    break
            if conflict is None:
                chosen = n
                break
        if chosen is None:
            seq, first, second = conflict
            raise SignatureTrainingError(
                f"Port {port} sequence {list(seq)} is claimed by both {first} and {second}",
                code="AMBIGUOUS_SIGNATURE",
            )
        seen = OrderedDict()
        for metaverse, sizes in flows:
            if len(sizes) >= chosen:
                seen.setdefault((metaverse, sizes[:chosen]), None)
        signatures.extend(UdpSignature(metaverse, port, seq) for metaverse, seq in seen)
        logger.info(f"Port {port}: {len(seen)} UDP signatures of length {chosen}")
    return signatures


def corpus_timestamp(captures: List[LabeledCapture]) -> Optional[str]:
    """Latest packet time in the corpus, so retraining on the same data is byte-stable."""
    latest = max((c.load()[-1].timestamp for c in captures if c.load()), default=None)
    if latest is None:
        return None
    return datetime.fromtimestamp(latest, tz=timezone.utc).isoformat()


def build_signature_set(primary_results: List[PrimaryTrainingResult], udp_signatures: List[UdpSignature],
                        created_at: Optional[str] = None) -> SignatureSet:
    sigset = SignatureSet(
        primaries=[s for r in primary_results for s in r.signatures],
        udp=udp_signatures,
        initial_hs_prefixes={r.metaverse: r.prefix_order for r in primary_results},
        created_at=created_at,
    )
    try:
        sigset.validate()
    except ValueError as e:
        raise SignatureTrainingError(f"Trained signatures are inconsistent: {e}", code="AMBIGUOUS_SIGNATURE")
    return sigset
