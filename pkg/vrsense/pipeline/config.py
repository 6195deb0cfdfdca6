# vrsense/pipeline/config.py

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional, Tuple

from vrsense.capture.records import parse_prefixes
from vrsense.classifier.stateful import resolve_threshold
from vrsense.config import parse_bool
from vrsense.errors import ConfigError
from vrsense.session.attributes import BOTH_DIRECTIONS, UPSTREAM_ONLY

logger = logging.getLogger(__name__)


def _ports(value) -> Tuple[int, ...]:
    if isinstance(value, str):
        value = [v for v in (s.strip() for s in value.split(",")) if v]
    try:
        ports = tuple(int(v) for v in value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Bad port list {value!r}: {e}")
    if any(not 0 < p < 65536 for p in ports):
        raise ConfigError(f"Port out of range in {ports}")
    return ports


@dataclass(frozen=True)
class EngineConfig:
    local_prefixes: Tuple = ("10.0.0.0/8",)
    primary_ports: Tuple[int, ...] = (443,)
    udp_ports: Tuple[int, ...] = (5055, 5056, 5058)
    signatures_path: Optional[str] = None
    model_dir: Optional[str] = None
    interval_len: float = 10.0
    past_states: int = 5
    threshold: float = 0.85
    shards: int = 1
    max_flows: int = 1_000_000
    k_max: int = 8
    idle_timeout_candidate: float = 60.0
    idle_timeout_tracked: float = 300.0
    session_idle_timeout: float = 120.0
    candidate_ttl: float = 60.0
    count_idle_flows: bool = True
    attribute_direction: str = UPSTREAM_ONLY
    queue_size: int = 10_000
    tick_seconds: float = 1.0
    as_map_path: Optional[str] = None
    report_path: Optional[str] = None
    enable_udp_stage: bool = True
    threaded: bool = False
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "local_prefixes", parse_prefixes(self.local_prefixes))
        object.__setattr__(self, "primary_ports", _ports(self.primary_ports))
        object.__setattr__(self, "udp_ports", _ports(self.udp_ports))
        self.validate()

    def validate(self) -> None:
        if self.interval_len <= 0:
            raise ConfigError(f"interval_len must be > 0, got {self.interval_len}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"confidence threshold must lie in [0, 1], got {self.threshold}")
        if self.past_states < 1:
            raise ConfigError(f"past_states (N) must be >= 1, got {self.past_states}")
        if self.shards < 1:
            raise ConfigError(f"shards must be >= 1, got {self.shards}")
        if self.k_max < 1 or self.max_flows < 1 or self.queue_size < 1:
            raise ConfigError("k_max, max_flows and queue_size must be positive")
        if self.tick_seconds <= 0:
            raise ConfigError(f"tick_seconds must be > 0, got {self.tick_seconds}")
        if self.attribute_direction not in (UPSTREAM_ONLY, BOTH_DIRECTIONS):
            raise ConfigError(f"attribute_direction must be '{UPSTREAM_ONLY}' or '{BOTH_DIRECTIONS}'")

    @classmethod
    def from_mapping(cls, config: Mapping[str, Any], **overrides) -> "EngineConfig":
        """Build from a Flask config (VRSENSE_* keys); keyword overrides that are None are ignored."""
        try:
            values = dict(
                local_prefixes=config.get("VRSENSE_LOCAL_PREFIXES", "10.0.0.0/8"),
                primary_ports=config.get("VRSENSE_PRIMARY_PORTS", "443"),
                udp_ports=config.get("VRSENSE_UDP_PORTS", "5055,5056,5058"),
                signatures_path=config.get("VRSENSE_SIGNATURES"),
                model_dir=config.get("VRSENSE_MODEL_DIR"),
                interval_len=float(config.get("VRSENSE_INTERVAL_LEN", 10)),
                past_states=int(config.get("VRSENSE_PAST_STATES", 5)),
                threshold=resolve_threshold(config.get("VRSENSE_CONFIDENCE_THRESHOLD", "main")),
                shards=int(config.get("VRSENSE_SHARDS", 1)),
                max_flows=int(config.get("VRSENSE_MAX_FLOWS", 1_000_000)),
                k_max=int(config.get("VRSENSE_K_MAX", 8)),
                idle_timeout_candidate=float(config.get("VRSENSE_IDLE_TIMEOUT_CANDIDATE", 60)),
                idle_timeout_tracked=float(config.get("VRSENSE_IDLE_TIMEOUT_TRACKED", 300)),
                session_idle_timeout=float(config.get("VRSENSE_SESSION_IDLE_TIMEOUT", 120)),
                candidate_ttl=float(config.get("VRSENSE_CANDIDATE_TTL", 60)),
                count_idle_flows=parse_bool(config.get("VRSENSE_COUNT_IDLE_FLOWS", True)),
                attribute_direction=config.get("VRSENSE_ATTRIBUTE_DIRECTION", UPSTREAM_ONLY),
                queue_size=int(config.get("VRSENSE_QUEUE_SIZE", 10_000)),
                tick_seconds=float(config.get("VRSENSE_TICK_SECONDS", 1.0)),
                as_map_path=config.get("VRSENSE_AS_MAP"),
                report_path=config.get("VRSENSE_REPORT_PATH"),
            )
            for key, value in overrides.items():
                if value is not None:
                    values[key] = resolve_threshold(value) if key == "threshold" else value
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid engine configuration: {e}")
        return cls(**values)

    def with_overrides(self, **overrides) -> "EngineConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})
