import ipaddress

import pytest

from vrsense.errors import ConfigError
from vrsense.pipeline.config import EngineConfig


def test_defaults():
    config = EngineConfig()
    assert config.local_prefixes == (ipaddress.ip_network("10.0.0.0/8"),)
    assert config.primary_ports == (443,)
    assert config.udp_ports == (5055, 5056, 5058)
    assert config.interval_len == 10.0
    assert config.past_states == 5
    assert config.threshold == 0.85
    assert config.enable_udp_stage


def test_from_flask_style_mapping():
    config = EngineConfig.from_mapping({
        "VRSENSE_LOCAL_PREFIXES": "10.0.0.0/8, 192.168.0.0/16",
        "VRSENSE_UDP_PORTS": "5055,5056",
        "VRSENSE_INTERVAL_LEN": "5",
        "VRSENSE_CONFIDENCE_THRESHOLD": "appendix",
    }, shards=4, past_states=None)
    assert len(config.local_prefixes) == 2
    assert config.udp_ports == (5055, 5056)
    assert config.interval_len == 5.0
    assert config.threshold == 0.80
    assert config.shards == 4
    assert config.past_states == 5


@pytest.mark.parametrize("overrides", [
    {"interval_len": 0},
    {"interval_len": -10},
    {"threshold": 1.5},
    {"past_states": 0},
    {"shards": 0},
    {"attribute_direction": "sideways"},
    {"udp_ports": "5055,notaport"},
    {"primary_ports": (70000,)},
    {"local_prefixes": ()},
])
def test_invalid_values(overrides):
    with pytest.raises(ConfigError):
        EngineConfig(**overrides)


def test_bad_mapping_values_become_config_errors():
    with pytest.raises(ConfigError):
        EngineConfig.from_mapping({"VRSENSE_INTERVAL_LEN": "ten"})


def test_overrides_skip_none():
    base = EngineConfig()
    changed = base.with_overrides(interval_len=5.0, threshold=None)
    assert changed.interval_len == 5.0
    assert changed.threshold == base.threshold
    with pytest.raises(ConfigError):
        base.with_overrides(interval_len=0.0)


@pytest.mark.parametrize("raw, expected", [("false", False), ("0", False), ("True", True), ("yes", True),
                                           (False, False), (True, True)])
def test_count_idle_flows_from_plain_mappings(raw, expected):
    config = EngineConfig.from_mapping({"VRSENSE_COUNT_IDLE_FLOWS": raw})
    assert config.count_idle_flows is expected
