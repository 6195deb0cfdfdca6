# vrsense/synth/background.py

"""
Non-metaverse background traffic: TLS flows to port 443 with random
handshake sizes and UDP flows on listed and unlisted ports.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from vrsense.capture.records import Transport
from vrsense.capture.tls import build_client_hello
from vrsense.flowtable.table import DEFAULT_K_MAX
from vrsense.signatures.matcher import MatchKind, SignatureMatcher
from vrsense.signatures.model import DEFAULT_UDP_PORTS, SignatureSet
from vrsense.synth.generator import app_data, datagram, handshake_payload
from vrsense.synth.packets import Frame, FlowEmitter, merge_streams, to_us
from vrsense.synth.script import DEFAULT_START

logger = logging.getLogger(__name__)

UNLISTED_UDP_PORTS = (443, 3478, 9000, 27015)
MAX_REDRAWS = 100


def _collides(matcher: Optional[SignatureMatcher], sizes: Sequence[int], k_max: int,
              port: Optional[int] = None) -> bool:
    """True when some prefix of the first k_max sizes is a full signature match."""
    if matcher is None:
        return False
    for i in range(1, min(len(sizes), k_max) + 1):
        outcome = matcher.match_primary(sizes[:i]) if port is None else matcher.match_udp(port, sizes[:i])
        if outcome.kind is MatchKind.MATCH:
            return True
        if outcome.kind is MatchKind.REJECT:
            return False
    return False


def _random_tls_sizes(rng: np.random.Generator) -> List[int]:
    sizes = [int(rng.integers(250, 700))]
    sizes += [int(s) for s in rng.integers(6, 200, size=int(rng.integers(1, 4)))]
    sizes += [int(s) for s in rng.integers(50, 1400, size=int(rng.integers(1, 6)))]
    return sizes


def _near_miss(rng: np.random.Generator, signatures: SignatureSet) -> List[int]:
    """A real primary signature with one size nudged by 1-3 bytes."""
    sig = signatures.primaries[int(rng.integers(len(signatures.primaries)))]
    sizes = list(sig.size_seq)
    pos = int(rng.integers(len(sizes)))
    delta = int(rng.integers(1, 4)) * (1 if rng.random() < 0.5 else -1)
    sizes[pos] = max(1, sizes[pos] + delta)
    return sizes + [int(s) for s in rng.integers(50, 1400, size=int(rng.integers(1, 4)))]


def _tls_flow(rng: np.random.Generator, index: int, user_ip: str, start_us: int, sizes: Sequence[int],
              duration_us: int) -> FlowEmitter:
    rtt_us = int(rng.integers(2_000, 120_000))
    server = f"{int(rng.integers(1, 224))}.{int(rng.integers(0, 256))}.{int(rng.integers(0, 256))}.{int(rng.integers(1, 255))}"
    flow = FlowEmitter(user_ip, 20000 + index % 40000, server, 443, Transport.TCP,
                       int(rng.integers(0, 2 ** 31)), int(rng.integers(0, 2 ** 31)))
    t = flow.tcp_open(start_us, rtt_us) + 50
    try:
        hello = build_client_hello(f"www.site{int(rng.integers(100000))}.example", sizes[0], rng.bytes(32))
    except ValueError:
        hello = handshake_payload(sizes[0])
    flow.up(t, hello)
    flow.down(t + rtt_us, handshake_payload(1400))
    step = max(200, duration_us // (len(sizes) + 1))
    t += rtt_us
    for size in sizes[1:]:
        t += step
        flow.up(t, app_data(size))
        flow.down(t + rtt_us, app_data(int(rng.integers(60, 1400))))
    flow.tcp_close(t + rtt_us + 1000, rtt_us)
    return flow


def _udp_flow(rng: np.random.Generator, index: int, user_ip: str, start_us: int, port: int,
              sizes: Sequence[int], duration_us: int) -> FlowEmitter:
    server = f"{int(rng.integers(1, 224))}.{int(rng.integers(0, 256))}.{int(rng.integers(0, 256))}.{int(rng.integers(1, 255))}"
    flow = FlowEmitter(user_ip, 20000 + index % 40000, server, port, Transport.UDP)
    step = max(1000, duration_us // max(1, len(sizes)))
    for i, size in enumerate(sizes):
        flow.up(start_us + i * step, datagram(size))
        if rng.random() < 0.5:
            flow.down(start_us + i * step + 500, datagram(int(rng.integers(20, 1200))))
    return flow


def generate_background(n_flows: int, seed: int, signatures: Optional[SignatureSet] = None,
                        exclude_collisions: bool = True, near_miss_fraction: float = 0.1,
                        planted: Sequence[Sequence[int]] = (), start: float = DEFAULT_START,
                        span: float = 600.0, udp_fraction: float = 0.3, n_users: int = 2000,
                        udp_ports: Sequence[int] = DEFAULT_UDP_PORTS, k_max: int = DEFAULT_K_MAX) -> List[Frame]:
    """
    ``planted`` sequences are emitted verbatim, one flow each, every one from
    its own user so no planted set can complete a session.
    """
    if n_flows < 0:
        raise ValueError("n_flows must be >= 0")
    rng = np.random.default_rng(seed)
    matcher = signatures.matcher if signatures is not None and exclude_collisions else None
    start_us = to_us(start)
    span_us = to_us(span)
    streams = []
    redrawn = 0

    for index in range(n_flows):
        user_ip = f"10.200.{(index % n_users) // 250}.{(index % n_users) % 250 + 1}"
        flow_start = start_us + int(rng.integers(0, span_us))
        duration_us = to_us(rng.uniform(0.2, 60.0))
        if rng.random() < udp_fraction:
            listed = rng.random() < 0.5
            ports = udp_ports if listed else UNLISTED_UDP_PORTS
            port = int(ports[int(rng.integers(len(ports)))])
            for _ in range(MAX_REDRAWS):
                sizes = [int(s) for s in rng.integers(20, 1200, size=int(rng.integers(4, 40)))]
                if not _collides(matcher, sizes, k_max, port):
                    break
                redrawn += 1
            flow = _udp_flow(rng, index, user_ip, flow_start, port, sizes, duration_us)
        else:
            near_miss = signatures is not None and signatures.primaries and rng.random() < near_miss_fraction
            for _ in range(MAX_REDRAWS):
                sizes = _near_miss(rng, signatures) if near_miss else _random_tls_sizes(rng)
                if not _collides(matcher, sizes, k_max):
                    break
                redrawn += 1
            flow = _tls_flow(rng, index, user_ip, flow_start, sizes, duration_us)
        streams.append(flow.render())

    for i, sizes in enumerate(planted):
        user_ip = f"10.250.{i // 250}.{i % 250 + 1}"
        flow_start = start_us + int(rng.integers(0, span_us))
        flow = _tls_flow(rng, n_flows + i, user_ip, flow_start, list(sizes) + [900], to_us(5.0))
        streams.append(flow.render())

    frames = merge_streams(*streams)
    logger.info(f"Generated {n_flows} background flows ({len(planted)} planted, {redrawn} redraws): "
                f"{len(frames)} frames")
    return frames
