from vrsense.capture.records import (  # noqa: F401
    CaptureSource, Direction, LinkType, PacketRecord, SourceKind, TlsMeta, TlsRecordKind, Transport,
    classify_direction, parse_prefixes,
)
from vrsense.capture.tls import parse_tls_client_hello  # noqa: F401
from vrsense.capture.pcap_reader import CaptureReader, CaptureStats, FrameDecoder, open_capture, read_records  # noqa: F401
