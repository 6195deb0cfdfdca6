# vrsense/capture/tls.py

"""
Minimal TLS record inspection.

Only the first record of a TCP segment is looked at. A client hello is
walked far enough to pull the server_name extension; anything that does not
parse degrades to the kind implied by the record's content-type byte.
"""

import struct
from typing import Optional

from vrsense.capture.records import TlsMeta, TlsRecordKind

CONTENT_CHANGE_CIPHER_SPEC = 0x14
CONTENT_ALERT = 0x15
CONTENT_HANDSHAKE = 0x16
CONTENT_APPLICATION_DATA = 0x17

HANDSHAKE_CLIENT_HELLO = 0x01
EXT_SERVER_NAME = 0x0000
SNI_HOST_NAME = 0x00

_KIND_BY_CONTENT_TYPE = {
    CONTENT_CHANGE_CIPHER_SPEC: TlsRecordKind.OTHER_HANDSHAKE,
    CONTENT_HANDSHAKE: TlsRecordKind.OTHER_HANDSHAKE,
    CONTENT_APPLICATION_DATA: TlsRecordKind.APP_DATA,
}


def record_kind(payload: bytes) -> TlsRecordKind:
    # Record header: type(1) version(2) length(2); every TLS version is 0x03xx.
    if len(payload) < 5 or payload[1] != 0x03:
        return TlsRecordKind.NONE
    return _KIND_BY_CONTENT_TYPE.get(payload[0], TlsRecordKind.NONE)


def parse_tls_client_hello(payload: bytes) -> TlsMeta:
    """
    Classify the first TLS record of ``payload`` and pull the SNI out of a
    client hello. Raises ValueError for an empty payload; callers skip those.
    """
    if not payload:
        raise ValueError("parse_tls_client_hello needs a non-empty payload")

    kind = record_kind(payload)
    if kind is not TlsRecordKind.OTHER_HANDSHAKE or payload[0] != CONTENT_HANDSHAKE:
        return TlsMeta(kind)
    if len(payload) < 6 or payload[5] != HANDSHAKE_CLIENT_HELLO:
        return TlsMeta(kind)

    try:
        sni = _extract_sni(payload)
    except (IndexError, struct.error, ValueError, UnicodeDecodeError):
        return TlsMeta(TlsRecordKind.OTHER_HANDSHAKE)
    return TlsMeta(TlsRecordKind.CLIENT_HELLO, sni or None)


def _take(data: bytes, pos: int, n: int) -> bytes:
    if n < 0 or pos + n > len(data):
        raise ValueError("client hello truncated")
    return data[pos:pos + n]


def _extract_sni(data: bytes) -> Optional[str]:
    record_len = struct.unpack("!H", _take(data, 3, 2))[0]
    end = min(len(data), 5 + record_len)
    data = data[:end]

    pos = 5 + 4            # handshake type + 24-bit length
    pos += 2 + 32          # client version + random
    session_id_len = _take(data, pos, 1)[0]
    pos += 1 + session_id_len
    cipher_len = struct.unpack("!H", _take(data, pos, 2))[0]
    pos += 2 + cipher_len
    compression_len = _take(data, pos, 1)[0]
    pos += 1 + compression_len
    if pos == len(data):
        return None        # no extensions block

    extensions_len = struct.unpack("!H", _take(data, pos, 2))[0]
    pos += 2
    ext_end = pos + extensions_len
    if ext_end > len(data):
        raise ValueError("extensions overrun the record")

    while pos + 4 <= ext_end:
        ext_type, ext_len = struct.unpack("!HH", _take(data, pos, 4))
        pos += 4
        body = _take(data, pos, ext_len)
        pos += ext_len
        if ext_type != EXT_SERVER_NAME:
            continue
        list_len = struct.unpack("!H", _take(body, 0, 2))[0]
        cursor, list_end = 2, min(2 + list_len, len(body))
        while cursor + 3 <= list_end:
            name_type = body[cursor]
            name_len = struct.unpack("!H", _take(body, cursor + 1, 2))[0]
            name = _take(body, cursor + 3, name_len)
            cursor += 3 + name_len
            if name_type == SNI_HOST_NAME:
                return name.decode("ascii")
        return None
    return None


def build_client_hello(sni: Optional[str], total_len: int, random_bytes: bytes = b"\x00" * 32) -> bytes:
    """
    Build a structurally valid TLS 1.2 client hello record of exactly
    ``total_len`` bytes, carrying ``sni`` and padded with the padding
    extension (type 21).
    """
    cipher_suites = struct.pack("!H", 4) + bytes([0xC0, 0x2F, 0xC0, 0x30])
    compression = b"\x01\x00"
    extensions = b""
    if sni:
        host = sni.encode("ascii")
        server_name_list = bytes([SNI_HOST_NAME]) + struct.pack("!H", len(host)) + host
        ext_data = struct.pack("!H", len(server_name_list)) + server_name_list
        extensions += struct.pack("!HH", EXT_SERVER_NAME, len(ext_data)) + ext_data

    def assemble(exts, session_id=b""):
        body = (
            struct.pack("!H", 0x0303) + random_bytes[:32].ljust(32, b"\x00")
            + bytes([len(session_id)]) + session_id + cipher_suites + compression
            + struct.pack("!H", len(exts)) + exts
        )
        handshake = bytes([HANDSHAKE_CLIENT_HELLO]) + struct.pack("!I", len(body))[1:] + body
        return bytes([CONTENT_HANDSHAKE]) + struct.pack("!HH", 0x0301, len(handshake)) + handshake

    base = assemble(extensions)
    gap = total_len - len(base)
    if gap == 0:
        return base
    if 0 < gap < 4:
        # too small for a padding extension; grow the session id instead
        return assemble(extensions, b"\x00" * gap)
    pad = gap - 4
    if pad < 0:
        raise ValueError(f"client hello for {sni!r} cannot be shorter than {len(base) + 4} bytes")
    extensions += struct.pack("!HH", 21, pad) + b"\x00" * pad
    return assemble(extensions)


def build_record(content_type: int, total_len: int, fill: bytes = b"") -> bytes:
    """A TLS record header followed by filler so the segment is ``total_len`` bytes."""
    if total_len < 5:
        return bytes([content_type]) + b"\x03\x03\x00"[: max(0, total_len - 1)]
    body_len = total_len - 5
    body = (fill * (body_len // max(1, len(fill)) + 1))[:body_len] if fill else b"\x00" * body_len
    return bytes([content_type]) + struct.pack("!HH", 0x0303, body_len) + body
