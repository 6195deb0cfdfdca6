import ipaddress

import numpy as np
import pytest

from vrsense.capture.pcap_reader import CaptureReader, FrameDecoder, read_records
from vrsense.capture.records import (
    CaptureSource, Direction, LinkType, TlsRecordKind, Transport, classify_direction, is_internal, parse_prefixes,
)
from vrsense.capture.tls import CONTENT_APPLICATION_DATA, build_client_hello, build_record, parse_tls_client_hello
from vrsense.errors import CaptureError, ConfigError
from vrsense.synth.packets import Frame, build_frame, emit_pcap

LOCAL = ("10.0.0.0/8",)


def _frames():
    hello = build_client_hello("prod.shapevrcloud.com", 414)
    return [
        Frame(1_000_000, build_frame("10.0.0.2", "52.1.1.1", 40000, 443, Transport.TCP, hello, seq=1)),
        Frame(1_020_000, build_frame("52.1.1.1", "10.0.0.2", 443, 40000, Transport.TCP, b"\x00" * 300,
                                     upstream=False)),
        Frame(1_030_000, build_frame("10.0.0.2", "18.5.5.5", 50000, 5055, Transport.UDP, b"\x00" * 56)),
        Frame(1_040_000, build_frame("10.0.0.2", "10.0.0.3", 50001, 53, Transport.UDP, b"\x00" * 30)),
    ]


def test_pcap_records_have_payload_sizes_and_directions(tmp_path):
    path = emit_pcap(_frames(), tmp_path / "small.pcap")
    records = read_records(path, LOCAL)

    assert len(records) == 4
    hello, reply, udp, internal = records
    assert hello.payload_len == 414
    assert hello.direction is Direction.UPSTREAM
    assert hello.tls.record_kind is TlsRecordKind.CLIENT_HELLO
    assert hello.tls.sni == "prod.shapevrcloud.com"
    assert hello.timestamp == pytest.approx(1.0)

    assert reply.direction is Direction.DOWNSTREAM
    assert reply.user_ip == "10.0.0.2"
    assert reply.payload_len == 300

    assert udp.transport is Transport.UDP
    assert udp.dst_port == 5055
    assert udp.payload_len == 56
    assert not udp.internal

    assert internal.internal
    assert internal.direction is Direction.UPSTREAM


def test_truncated_capture_keeps_complete_records(tmp_path):
    path = emit_pcap(_frames()[:3], tmp_path / "cut.pcap")
    data = path.read_bytes()
    path.write_bytes(data[:-10])

    reader = CaptureReader(CaptureSource.from_file(path, LOCAL))
    records = list(reader)

    assert len(records) == 2
    assert reader.stats.truncated == 1


def test_bad_global_header_is_rejected(tmp_path):
    short = tmp_path / "short.pcap"
    short.write_bytes(b"\xd4\xc3\xb2")
    with pytest.raises(CaptureError) as e:
        read_records(short, LOCAL)
    assert e.value.code == "MALFORMED_GLOBAL_HEADER"

    garbage = tmp_path / "garbage.pcap"
    garbage.write_bytes(b"\x00" * 24)
    with pytest.raises(CaptureError):
        read_records(garbage, LOCAL)


def test_live_frames_decode_like_file_frames(tmp_path):
    frames = _frames()
    from_file = read_records(emit_pcap(frames, tmp_path / "f.pcap"), LOCAL)
    live = list(CaptureReader(CaptureSource.from_frames(((f.timestamp, f.data) for f in frames), LOCAL)))
    assert live == from_file


def test_non_ip_frame_is_counted_not_decoded():
    decoder = FrameDecoder(parse_prefixes(LOCAL))
    arp = b"\xff" * 6 + b"\x02" * 6 + b"\x08\x06" + b"\x00" * 28
    assert decoder.decode(0.0, arp, LinkType.ETHERNET) is None
    assert decoder.stats.non_ip == 1


def test_direction_matches_prefix_membership():
    rng = np.random.default_rng(5)
    prefixes = parse_prefixes(["10.0.0.0/8", "192.168.0.0/16"])
    for _ in range(1000):
        src = str(ipaddress.IPv4Address(int(rng.integers(0, 2 ** 32))))
        dst = str(ipaddress.IPv4Address(int(rng.integers(0, 2 ** 32))))
        if rng.random() < 0.3:
            src = f"10.{rng.integers(256)}.{rng.integers(256)}.{rng.integers(256)}"
        local = any(ipaddress.ip_address(src) in net for net in prefixes)
        expected = Direction.UPSTREAM if local else Direction.DOWNSTREAM
        assert classify_direction(src, dst, prefixes) is expected


def test_local_to_local_is_internal_upstream():
    prefixes = parse_prefixes(LOCAL)
    assert classify_direction("10.0.0.2", "10.9.9.9", prefixes) is Direction.UPSTREAM
    assert is_internal("10.0.0.2", "10.9.9.9", prefixes)
    assert not is_internal("10.0.0.2", "8.8.8.8", prefixes)


def test_no_local_prefix_is_a_config_error():
    with pytest.raises(ConfigError):
        parse_prefixes("")
    with pytest.raises(ConfigError):
        parse_prefixes(["not-a-cidr"])


def test_client_hello_round_trip():
    for sni, size in (("prod.shapevrcloud.com", 414), ("api.vrchat.com", 244), ("auth.rec.com", 149)):
        payload = build_client_hello(sni, size)
        assert len(payload) == size
        meta = parse_tls_client_hello(payload)
        assert meta.record_kind is TlsRecordKind.CLIENT_HELLO
        assert meta.sni == sni


def test_client_hello_without_sni():
    meta = parse_tls_client_hello(build_client_hello(None, 200))
    assert meta.record_kind is TlsRecordKind.CLIENT_HELLO
    assert meta.sni is None


def test_record_kinds():
    assert parse_tls_client_hello(build_record(CONTENT_APPLICATION_DATA, 338)).record_kind is TlsRecordKind.APP_DATA
    assert parse_tls_client_hello(b"GET / HTTP/1.1\r\n").record_kind is TlsRecordKind.NONE
    with pytest.raises(ValueError):
        parse_tls_client_hello(b"")


def test_fuzzed_payloads_never_yield_an_empty_sni():
    rng = np.random.default_rng(11)
    for i in range(2000):
        body = rng.bytes(int(rng.integers(1, 300)))
        payload = b"\x16\x03\x01" + body if i % 2 else body
        meta = parse_tls_client_hello(payload)
        if meta.record_kind is TlsRecordKind.CLIENT_HELLO:
            assert meta.sni is None or len(meta.sni) > 0
        else:
            assert meta.sni is None
