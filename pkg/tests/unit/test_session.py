import math
from pathlib import Path

import pytest

from vrsense.capture.records import Transport
from vrsense.flowtable.table import FlowKey
from vrsense.session.context import (
    ClassificationResult, SessionContext, SessionEvent, SessionReport, UdpAttachment,
)
from vrsense.session.manager import SessionManager
from vrsense.session.states import KNOWN_STATES, DomainType, Provenance, StateLabel, allowed_states


def _key(user="10.0.0.2", port=40000, transport=Transport.TCP, dport=443):
    return FlowKey(user, "52.0.0.1", port, dport, transport)


def _start_multiverse(manager, user="10.0.0.2", t=0.0):
    assert manager.register_primary_detection(user, "Multiverse", "prod", _key(user, 40000), t) is SessionEvent.NONE
    return manager.register_primary_detection(user, "Multiverse", "prodblobs", _key(user, 40001), t + 1.0)


def test_session_starts_when_every_prefix_is_seen(signatures):
    manager = SessionManager(signatures)
    assert _start_multiverse(manager) is SessionEvent.SESSION_STARTED

    session = manager.sessions[("10.0.0.2", "Multiverse")]
    assert session.session_start == 1.0
    assert session.active_prefixes == {"prod", "prodblobs"}
    assert manager.session_for_flow(_key(port=40000)) is session
    assert manager.session_for_flow(_key(port=40001)) is session
    assert session.flow_info[_key(port=40000)].tracked_from == 0.0
    assert manager.sessions_started == 1


def test_repeated_prefix_does_not_start_a_session(signatures):
    manager = SessionManager(signatures)
    for i in range(5):
        event = manager.register_primary_detection("10.0.0.2", "Multiverse", "prod", _key(port=40000 + i), i)
        assert event is SessionEvent.NONE
    assert not manager.sessions


def test_candidate_prefixes_expire(signatures):
    manager = SessionManager(signatures, candidate_ttl=60.0)
    manager.register_primary_detection("10.0.0.2", "Multiverse", "prod", _key(port=1), 0.0)
    assert manager.register_primary_detection(
        "10.0.0.2", "Multiverse", "prodblobs", _key(port=2), 61.0) is SessionEvent.NONE
    assert manager.register_primary_detection(
        "10.0.0.2", "Multiverse", "prod", _key(port=3), 62.0) is SessionEvent.SESSION_STARTED

    edge = SessionManager(signatures, candidate_ttl=60.0)
    edge.register_primary_detection("10.0.0.2", "Multiverse", "prod", _key(port=1), 0.0)
    assert edge.register_primary_detection(
        "10.0.0.2", "Multiverse", "prodblobs", _key(port=2), 60.0) is SessionEvent.SESSION_STARTED


def test_udp_without_session_is_orphaned(signatures):
    manager = SessionManager(signatures)
    udp = _key(port=50000, transport=Transport.UDP, dport=5055)
    assert manager.register_udp_detection("10.0.0.2", "Multiverse", udp, 0.5) is UdpAttachment.ORPHANED
    assert manager.orphaned == 1
    assert manager.session_for_flow(udp) is None

    _start_multiverse(manager)
    assert manager.register_udp_detection("10.0.0.2", "Multiverse", udp, 2.0) is UdpAttachment.TRACKED
    session = manager.sessions[("10.0.0.2", "Multiverse")]
    assert session.tracked_flows[udp] is DomainType.TIME_CRITICAL
    assert manager.orphaned == 1


def test_users_are_independent(signatures):
    manager = SessionManager(signatures)
    manager.register_primary_detection("10.0.0.2", "Multiverse", "prod", _key("10.0.0.2", 1), 0.0)
    manager.register_primary_detection("10.0.0.3", "Multiverse", "prodblobs", _key("10.0.0.3", 1), 0.5)
    assert not manager.sessions
    assert manager.register_primary_detection(
        "10.0.0.3", "Multiverse", "prod", _key("10.0.0.3", 2), 1.0) is SessionEvent.SESSION_STARTED
    assert manager.register_primary_detection(
        "10.0.0.2", "Multiverse", "prodblobs", _key("10.0.0.2", 2), 1.5) is SessionEvent.SESSION_STARTED
    assert len(manager.sessions) == 2
    assert manager.sessions[("10.0.0.3", "Multiverse")].session_start == 1.0


def test_idle_session_is_closed_by_tick(signatures):
    manager = SessionManager(signatures, idle_timeout=120.0)
    _start_multiverse(manager)
    assert manager.tick(120.9) == []
    reports = manager.tick(121.0)
    assert len(reports) == 1
    assert reports[0].app == "Multiverse"
    assert not manager.sessions
    assert not manager.flow_index
    assert manager.sessions_closed == 1


def test_untracked_packet_is_refused(make_packet):
    session = SessionContext("10.0.0.2", "VRChat", 0.0)
    with pytest.raises(KeyError):
        session.accumulate(make_packet(1.0, size=100))


def test_intervals_close_at_boundaries(make_packet):
    session = SessionContext("10.0.0.2", "VRChat", 100.0, interval_len=10.0)
    key = FlowKey("10.0.0.2", "52.10.0.1", 40000, 443, Transport.TCP)
    session.attach_flow(key, DomainType.PRIMARY, 100.0)

    session.accumulate(make_packet(100.5, size=100))
    assert session.advance(109.99) == 0
    assert session.advance(110.0) == 1
    session.accumulate(make_packet(115.0, size=200))
    session.accumulate(make_packet(125.0, size=300))
    assert [r.bytes_up for r in session.intervals] == [100, 200]
    assert session.intervals[0].attributes["tcp_prim_#_new_flow"] == 1
    assert session.intervals[1].attributes["tcp_prim_#_new_flow"] == 0



def test_streaming_intervals_agree_with_offline_index(make_packet):
    start, length = 1700000000.123, 0.3
    session = SessionContext("10.0.0.2", "VRChat", start, interval_len=length)
    key = FlowKey("10.0.0.2", "52.10.0.1", 40000, 443, Transport.TCP)
    session.attach_flow(key, DomainType.PRIMARY, start)

    for k in range(1, 300):
        boundary = start + k * length
        for ts in (math.nextafter(boundary, 0.0), boundary, math.nextafter(boundary, math.inf)):
            session.accumulate(make_packet(ts, size=10))
            assert session.current.index == session.interval_index(ts)
            assert (session.current.start, session.current.end) == session.interval_bounds(session.current.index)
    assert [r.index for r in session.intervals] == list(range(len(session.intervals)))

def test_close_trims_to_last_activity(make_packet):
    session = SessionContext("10.0.0.2", "VRChat", 100.0, interval_len=10.0)
    key = FlowKey("10.0.0.2", "52.10.0.1", 40000, 443, Transport.TCP)
    session.attach_flow(key, DomainType.PRIMARY, 100.0)
    for ts in (100.5, 115.0, 125.0):
        session.accumulate(make_packet(ts, size=100))
        session.accumulate(make_packet(ts + 0.01, "52.10.0.1", "10.0.0.2", 443, 40000, size=1000))
    # idle ticks run past the last packet
    session.advance(200.0)

    report = session.close(200.0)
    assert report.end == pytest.approx(125.01)
    assert len(report.timeline) == 3
    assert [e.interval for e in report.timeline] == [0, 1, 2]
    assert report.per_state == {"UNKNOWN": {"seconds": 30.0, "bytes_up": 300, "bytes_down": 3000}}
    assert report.flows[0]["bytes_down"] == 3000


def test_classification_hook_and_fallback_count(make_packet):
    calls = []

    def classify(ctx, attrs):
        calls.append(len(attrs))
        provenance = Provenance.STATELESS_FALLBACK if len(calls) == 1 else Provenance.STATEFUL
        return ClassificationResult(StateLabel.HS, 0.9, provenance)

    session = SessionContext("10.0.0.2", "VRChat", 0.0, classify=classify)
    key = FlowKey("10.0.0.2", "52.10.0.1", 40000, 443, Transport.TCP)
    session.attach_flow(key, DomainType.PRIMARY, 0.0)
    session.accumulate(make_packet(25.0, size=10))

    report = session.close()
    assert calls == [40, 40, 40]
    assert [e.state for e in report.timeline] == [StateLabel.HS] * 3
    assert report.fallbacks == 1
    assert report.per_state["HS"]["seconds"] == 30.0
    assert session.current_state is StateLabel.HS


def test_evicted_flow_is_not_carried_forward(make_packet):
    session = SessionContext("10.0.0.2", "VRChat", 0.0)
    key = FlowKey("10.0.0.2", "52.10.0.1", 40000, 443, Transport.TCP)
    session.attach_flow(key, DomainType.PRIMARY, 0.0)
    session.accumulate(make_packet(1.0, size=10))
    session.detach_flow(key)
    session.advance(10.0)
    assert key not in session.current.flows
    assert session.intervals[0].attributes["tcp_prim_#_cncr_flow"] == 1


def test_report_dict_round_trip(make_packet):
    session = SessionContext("10.0.0.2", "VRChat", 0.0)
    key = FlowKey("10.0.0.2", "52.10.0.1", 40000, 443, Transport.TCP)
    session.attach_flow(key, DomainType.PRIMARY, 0.0)
    session.accumulate(make_packet(12.0, size=10))
    report = session.close()
    again = SessionReport.from_dict(report.to_dict())
    assert again.to_dict() == report.to_dict()


def test_allowed_states():
    assert allowed_states("VRChat") == [StateLabel.HS, StateLabel.SUE]
    assert StateLabel.CC in allowed_states("Rec Room")
    assert StateLabel.UNKNOWN not in allowed_states("SomethingElse")


def test_state_descriptions_match_the_readme():
    assert StateLabel.SUE.description == "separate user-created event"
    assert StateLabel.AT.description == "asset trading"
    readme = (Path(__file__).resolve().parents[2] / "README.md").read_text()
    for label in KNOWN_STATES:
        assert f"- {label.value}: {label.description}\n" in readme
