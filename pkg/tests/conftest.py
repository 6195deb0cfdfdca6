import pytest

from vrsense import create_app
from vrsense.capture.records import Direction, PacketRecord, TlsMeta, Transport
from vrsense.session.states import StateLabel
from vrsense.signatures.model import default_signature_set
from vrsense.synth.generator import generate_session
from vrsense.synth.script import SessionScript


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run corpus-scale tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: corpus-scale test, only runs with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def app(tmp_path):
    app = create_app("testing")
    app.config["VRSENSE_MODEL_DIR"] = str(tmp_path / "models")
    return app


@pytest.fixture
def client(app):
    return app.test_client()


@pytest.fixture
def runner(app):
    return app.test_cli_runner()


@pytest.fixture(scope="session")
def signatures():
    return default_signature_set()


def _packet(ts, src="10.0.0.2", dst="52.10.0.1", sport=40000, dport=443, transport=Transport.TCP, size=0,
            seq=None, flags=0x10, tls=None, internal=False, direction=None):
    if direction is None:
        direction = Direction.UPSTREAM if src.startswith("10.") else Direction.DOWNSTREAM
    if tls is not None and not isinstance(tls, TlsMeta):
        tls = TlsMeta(tls)
    return PacketRecord(timestamp=ts, src_ip=src, dst_ip=dst, src_port=sport, dst_port=dport,
                        transport=transport, direction=direction, payload_len=size, tcp_seq=seq,
                        tcp_flags=flags, tls=tls, internal=internal)


@pytest.fixture
def make_packet():
    """Factory for PacketRecords; direction follows the 10/8 local block unless given."""
    return _packet


@pytest.fixture(scope="session")
def multiverse_session(signatures):
    """One 70 s Multiverse session (HS then MH) with its ground truth."""
    script = SessionScript("Multiverse", [(StateLabel.HS, 40.0), (StateLabel.MH, 30.0)], seed=7, rtt_ms=15.0)
    return generate_session(script, signatures)


@pytest.fixture(scope="session")
def vrchat_session(signatures):
    script = SessionScript("VRChat", [(StateLabel.HS, 30.0), (StateLabel.SUE, 30.0)], seed=11,
                           user_ip="10.0.0.9", rtt_ms=35.0)
    return generate_session(script, signatures)
