# vrsense/synth/generator.py

"""
Synthetic metaverse sessions.

A session opens with one primary TLS flow per signature of each initial HS
prefix, in prefix order; the session is detected at the last of those flows'
first application-data packet. Each scripted state then emits primary TCP
flows and time-critical UDP flows drawn from its profile.
"""

import logging
import math
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from vrsense.capture.records import Transport
from vrsense.capture.tls import (
    CONTENT_APPLICATION_DATA, CONTENT_CHANGE_CIPHER_SPEC, CONTENT_HANDSHAKE, build_client_hello, build_record,
)
from vrsense.errors import SynthError
from vrsense.session.states import DomainType, StateLabel
from vrsense.signatures.model import PrimarySignature, SignatureSet, UdpSignature
from vrsense.synth.packets import MSS, Frame, FlowEmitter, merge_streams, to_us
from vrsense.synth.profiles import ProfileSet, StateProfile, load_profiles
from vrsense.synth.script import FlowTruth, GroundTruthSidecar, SessionScript, tile_intervals

logger = logging.getLogger(__name__)

OPENING_GAP_US = 150_000
UDP_SIGNATURE_SPACING_US = 33_000
FLOW_START_MARGIN_US = 1_000_000
HEARTBEAT_SIZE = 41


@lru_cache(maxsize=4096)
def app_data(size: int) -> bytes:
    return build_record(CONTENT_APPLICATION_DATA, size)


@lru_cache(maxsize=4096)
def datagram(size: int) -> bytes:
    return b"\x00" * size


def handshake_payload(size: int) -> bytes:
    return build_record(CONTENT_CHANGE_CIPHER_SPEC if size == 6 else CONTENT_HANDSHAKE, size)


class _TrackedEmitter:
    __slots__ = ("emitter", "domain_type", "rtt_ms", "detect_us", "ready_us")

    def __init__(self, emitter: FlowEmitter, domain_type: DomainType, rtt_ms: Optional[float],
                 detect_us: int, ready_us: int):
        self.emitter = emitter
        self.domain_type = domain_type
        self.rtt_ms = rtt_ms
        self.detect_us = detect_us
        self.ready_us = ready_us


class SessionBuilder:
    def __init__(self, script: SessionScript, signatures: SignatureSet, profiles: ProfileSet):
        self.script = script
        self.signatures = signatures
        self.profiles = profiles
        self.rng = np.random.default_rng(script.seed)
        self.domain = signatures.domain_of(script.metaverse)
        self.primaries = signatures.primaries_for(script.metaverse)
        self.udp_by_port: Dict[int, List[UdpSignature]] = {}
        for sig in signatures.udp_for(script.metaverse):
            self.udp_by_port.setdefault(sig.port, []).append(sig)
        self.flows: List[_TrackedEmitter] = []
        self.udp_flows: List[_TrackedEmitter] = []
        self.next_port = 40000 + int(self.rng.integers(0, 10000))
        self.primary_turn = 0
        self.udp_turn = {port: 0 for port in self.udp_by_port}
        self.servers: Dict[str, str] = {}

    def _client_port(self) -> int:
        port = self.next_port
        self.next_port = port + 1 if port < 65535 else 20000
        return port

    def _server_ip(self, first_octet: int) -> str:
        b, c, d = self.rng.integers(0, 256, size=3)
        return f"{first_octet}.{b}.{c}.{max(1, d % 255)}"

    def _rtt(self) -> Tuple[int, float]:
        rtt_ms = self.script.rtt_ms if self.script.rtt_ms is not None else self.profiles.rtt_ms.sample(self.rng)
        rtt_us = max(100, int(round(rtt_ms * 1000)))
        return rtt_us, rtt_us / 1000

    def primary_flow(self, sig: PrimarySignature, start_us: int) -> _TrackedEmitter:
        """TCP + TLS handshake whose upstream payload sizes are exactly the signature."""
        rtt_us, rtt_ms = self._rtt()
        server = self.servers.setdefault(sig.prefix, self._server_ip(52))
        flow = FlowEmitter(self.script.user_ip, self._client_port(), server, 443, Transport.TCP,
                           int(self.rng.integers(0, 2 ** 31)), int(self.rng.integers(0, 2 ** 31)))
        hello_us = flow.tcp_open(start_us, rtt_us) + 50
        try:
            hello = build_client_hello(f"{sig.prefix}.{self.domain}.com", sig.size_seq[0], self.rng.bytes(32))
        except ValueError as e:
            raise SynthError(f"Signature {list(sig.size_seq)} cannot be generated: {e}", code="BAD_SCRIPT")
        flow.up(hello_us, hello)
        flow.down(hello_us + rtt_us, handshake_payload(1400))
        flow.down(hello_us + rtt_us + 100, handshake_payload(1200))
        t = hello_us + rtt_us + 1000
        for size in sig.size_seq[1:-1]:
            t += 200
            flow.up(t, handshake_payload(size))
        flow.down(t + rtt_us, handshake_payload(51))
        detect_us = t + rtt_us + 500
        flow.up(detect_us, app_data(sig.size_seq[-1]))
        flow.down(detect_us + rtt_us, app_data(int(self.rng.integers(200, MSS))))
        tracked = _TrackedEmitter(flow, DomainType.PRIMARY, rtt_ms, detect_us, detect_us + rtt_us + 100)
        self.flows.append(tracked)
        return tracked

    def udp_flow(self, sig: UdpSignature, start_us: int) -> _TrackedEmitter:
        rtt_us, _ = self._rtt()
        flow = FlowEmitter(self.script.user_ip, self._client_port(), self._server_ip(18), sig.port, Transport.UDP)
        t = start_us
        for size in sig.size_seq:
            flow.up(t, datagram(size))
            t += UDP_SIGNATURE_SPACING_US
        flow.down(start_us + rtt_us, datagram(int(self.profiles.udp_down_size.sample(self.rng))))
        detect_us = t - UDP_SIGNATURE_SPACING_US
        tracked = _TrackedEmitter(flow, DomainType.TIME_CRITICAL, None, detect_us, t)
        self.flows.append(tracked)
        return tracked

    def transfer(self, flow: FlowEmitter, lo_us: int, hi_us: int, volume_up: float, volume_down: float) -> None:
        """Spread upstream and downstream application bytes over [lo, hi)."""
        span = max(1, hi_us - lo_us)
        for volume, send in ((volume_up, flow.up), (volume_down, flow.down)):
            volume = int(volume)
            if volume <= 0:
                continue
            count = math.ceil(volume / MSS)
            times = np.sort(self.rng.integers(0, span, size=count)) + lo_us
            for i, ts in enumerate(times):
                size = MSS if i < count - 1 else volume - MSS * (count - 1)
                send(int(ts), app_data(size))

    def next_primary(self) -> PrimarySignature:
        sig = self.primaries[self.primary_turn % len(self.primaries)]
        self.primary_turn += 1
        return sig

    def session_primary(self, start_us: int, seg_end_us: int, volume_up: float, volume_down: float,
                        duration_us: Optional[int] = None) -> None:
        tracked = self.primary_flow(self.next_primary(), start_us)
        if duration_us is None:
            duration_us = to_us(self.profiles.flow_duration.sample(self.rng))
        end_us = min(tracked.ready_us + duration_us, seg_end_us)
        if end_us <= tracked.ready_us:
            end_us = tracked.ready_us + 1000
        self.transfer(tracked.emitter, tracked.ready_us, end_us, volume_up, volume_down)
        tracked.emitter.tcp_close(end_us, to_us(tracked.rtt_ms / 1000))

    def segment(self, label: StateLabel, lo_us: int, hi_us: int, profile: StateProfile) -> None:
        rng = self.rng
        primary = profile.primary_tcp
        latest_start = hi_us - FLOW_START_MARGIN_US

        if primary.burst_at_entry and lo_us < latest_start:
            volume = primary.burst_volume_up or primary.flow_volume_up
            for _ in range(primary.burst_flows):
                start = lo_us + int(rng.integers(0, min(2_000_000, latest_start - lo_us)))
                self.session_primary(start, hi_us, volume.sample(rng), primary.flow_volume_down.sample(rng))

        slot_us = to_us(self.script.interval_len)
        t = lo_us
        while t < latest_start:
            slot_hi = min(t + slot_us, latest_start)
            count = int(rng.poisson(primary.new_flows_per_interval.mean * (slot_hi - t) / slot_us))
            for start in np.sort(rng.integers(t, slot_hi, size=count)):
                self.session_primary(int(start), hi_us, primary.flow_volume_up.sample(rng),
                                     primary.flow_volume_down.sample(rng))
            t = slot_hi

        if primary.spike_period_s:
            period_us = to_us(primary.spike_period_s)
            t = lo_us + period_us
            while t < latest_start:
                self.session_primary(t, hi_us, primary.spike_volume_up.sample(rng), 20_000, duration_us=1_000_000)
                t += period_us

        tc = profile.time_critical_udp
        if tc.active:
            self.udp_flows = []
            for offset, port in enumerate(sorted(self.udp_by_port)):
                sigs = self.udp_by_port[port]
                sig = sigs[self.udp_turn[port] % len(sigs)]
                self.udp_turn[port] += 1
                self.udp_flows.append(self.udp_flow(sig, lo_us + 100_000 + offset * 7_000))
        up_pps = tc.upstream_pps.sample(rng)
        down_pps = tc.downstream_pps.sample(rng) * self.script.crowd_factor
        for tracked in self.udp_flows:
            start = max(lo_us, tracked.ready_us)
            self._steady_udp(tracked.emitter, start, hi_us, up_pps, down_pps)

    def _steady_udp(self, flow: FlowEmitter, lo_us: int, hi_us: int, up_pps: float, down_pps: float) -> None:
        span = hi_us - lo_us
        if span <= 0:
            return
        for pps, size_dist, send in ((up_pps, self.profiles.udp_up_size, flow.up),
                                     (down_pps, self.profiles.udp_down_size, flow.down)):
            count = int(round(pps * span / 1_000_000))
            if count <= 0:
                continue
            # one packet per equal slot keeps the rate exact over any window of a few slots
            slots = (np.arange(count) + self.rng.random(count)) * (span / count)
            sizes = size_dist.sample_n(self.rng, count).astype(np.int64)
            for offset, size in zip(slots.astype(np.int64), sizes):
                send(lo_us + int(offset), datagram(max(1, int(size))))

    def heartbeat(self, anchor: _TrackedEmitter, lo_us: int, hi_us: int) -> None:
        """Keep the first opening flow alive through quiet states and mark the session's last instant."""
        rtt_us = to_us(anchor.rtt_ms / 1000)
        period_us = to_us(self.profiles.heartbeat_s)
        t = lo_us + period_us
        while t < hi_us - period_us // 2:
            anchor.emitter.up(t, app_data(HEARTBEAT_SIZE))
            anchor.emitter.down(t + rtt_us, app_data(HEARTBEAT_SIZE))
            t += period_us
        final_us = hi_us - rtt_us - 2000
        if final_us > lo_us:
            anchor.emitter.up(final_us, app_data(HEARTBEAT_SIZE))
            anchor.emitter.down(final_us + rtt_us, app_data(HEARTBEAT_SIZE))


def generate_session(script: SessionScript, signatures: SignatureSet,
                     profiles: Optional[ProfileSet] = None) -> Tuple[List[Frame], GroundTruthSidecar]:
    script.validate()
    profiles = profiles or load_profiles()
    if script.metaverse not in signatures.metaverses:
        raise SynthError(f"Signature model has no entry for {script.metaverse}", code="BAD_SCRIPT")
    missing = sorted({label.value for label, _ in script.states if label not in profiles})
    if missing:
        raise SynthError(f"No profile for states {missing}", code="BAD_SCRIPT")
    required = signatures.initial_hs_prefixes.get(script.metaverse, ())
    if not required:
        raise SynthError(f"{script.metaverse} has no initial HS prefixes", code="BAD_SCRIPT")

    builder = SessionBuilder(script, signatures, profiles)
    opening = []
    t = to_us(script.start)
    for prefix in required:
        for sig in [s for s in builder.primaries if s.prefix == prefix]:
            tracked = builder.primary_flow(sig, t)
            opening.append(tracked)
            t = tracked.ready_us + OPENING_GAP_US
    session_start_us = opening[-1].detect_us

    t = session_start_us
    for label, duration in script.states:
        hi = t + to_us(duration)
        builder.segment(label, t, hi, profiles[label])
        t = hi
    session_end_us = t
    until = None
    if session_end_us > session_start_us:
        builder.heartbeat(opening[0], session_start_us, session_end_us)
        until = session_end_us

    streams, flows = [], []
    for tracked in builder.flows:
        frames = tracked.emitter.render(until)
        if not frames:
            continue
        streams.append(frames)
        if tracked.emitter.last_us >= tracked.detect_us:
            flows.append(FlowTruth(tracked.emitter.key, tracked.domain_type, tracked.rtt_ms,
                                   tracked.emitter.first_us / 1_000_000, tracked.emitter.last_us / 1_000_000))
    frames = merge_streams(*streams)

    start = session_start_us / 1_000_000
    sidecar = GroundTruthSidecar(
        user=script.user_ip, app=script.metaverse, start=start, end=session_end_us / 1_000_000,
        interval_len=script.interval_len, intervals=tile_intervals(start, script.states, script.interval_len),
        flows=flows, seed=script.seed,
    )
    logger.info(f"Generated {script.metaverse} session for {script.user_ip}: {len(frames)} frames, "
                f"{len(flows)} flows, {len(sidecar.intervals)} intervals")
    return frames, sidecar
