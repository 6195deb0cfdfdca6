# vrsense/synth/profiles.py

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from vrsense.errors import SynthError
from vrsense.session.states import StateLabel

logger = logging.getLogger(__name__)

DEFAULT_PROFILES_PATH = Path(__file__).parent / "profiles.json"


@dataclass(frozen=True)
class Distribution:
    """A non-negative random quantity: const, uniform, normal, lognormal or poisson, optionally clamped."""
    kind: str
    params: Dict[str, float] = field(default_factory=dict)

    KINDS = ("const", "uniform", "normal", "lognormal", "poisson")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise SynthError(f"Unknown distribution kind {self.kind!r}", code="BAD_PROFILE")
        if self.kind == "const" and self.params.get("value", 0) < 0:
            raise SynthError("Constant rates must be >= 0", code="BAD_PROFILE")

    @classmethod
    def from_dict(cls, data) -> "Distribution":
        if isinstance(data, (int, float)):
            return cls("const", {"value": float(data)})
        params = {k: float(v) for k, v in data.items() if k != "kind"}
        return cls(data["kind"], params)

    @property
    def mean(self) -> float:
        p = self.params
        if self.kind == "const":
            return p["value"]
        if self.kind == "uniform":
            return (p["low"] + p["high"]) / 2
        if self.kind == "normal":
            return p["mean"]
        if self.kind == "lognormal":
            return float(np.exp(p["mean"] + p["sigma"] ** 2 / 2))
        return p["lam"]

    def sample(self, rng: np.random.Generator) -> float:
        p = self.params
        if self.kind == "const":
            value = p["value"]
        elif self.kind == "uniform":
            value = rng.uniform(p["low"], p["high"])
        elif self.kind == "normal":
            value = rng.normal(p["mean"], p["std"])
        elif self.kind == "lognormal":
            value = rng.lognormal(p["mean"], p["sigma"])
        else:
            value = rng.poisson(p["lam"])
        value = max(value, p.get("min", 0.0))
        if "max" in p:
            value = min(value, p["max"])
        return float(value)

    def sample_n(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = self.params
        if self.kind == "const":
            values = np.full(n, p["value"], dtype=np.float64)
        elif self.kind == "uniform":
            values = rng.uniform(p["low"], p["high"], size=n)
        elif self.kind == "normal":
            values = rng.normal(p["mean"], p["std"], size=n)
        elif self.kind == "lognormal":
            values = rng.lognormal(p["mean"], p["sigma"], size=n)
        else:
            values = rng.poisson(p["lam"], size=n).astype(np.float64)
        return np.clip(values, p.get("min", 0.0), p.get("max", np.inf))


@dataclass
class PrimaryTcpProfile:
    new_flows_per_interval: Distribution
    flow_volume_up: Distribution
    flow_volume_down: Distribution
    burst_at_entry: bool = False
    burst_flows: int = 0
    burst_volume_up: Optional[Distribution] = None
    spike_period_s: Optional[float] = None
    spike_volume_up: Optional[Distribution] = None


@dataclass
class TimeCriticalProfile:
    active: bool
    upstream_pps: Distribution
    downstream_pps: Distribution


@dataclass
class StateProfile:
    state: StateLabel
    primary_tcp: PrimaryTcpProfile
    time_critical_udp: TimeCriticalProfile
    duration: Distribution


@dataclass
class ProfileSet:
    states: Dict[StateLabel, StateProfile]
    rtt_ms: Distribution
    flow_duration: Distribution
    udp_up_size: Distribution
    udp_down_size: Distribution
    heartbeat_s: float = 20.0

    def __getitem__(self, state: StateLabel) -> StateProfile:
        return self.states[state]

    def __contains__(self, state) -> bool:
        return state in self.states


def _state_profile(label: StateLabel, data: Dict) -> StateProfile:
    tcp = data["primary_tcp"]
    spike = tcp.get("upload_spike")
    primary = PrimaryTcpProfile(
        new_flows_per_interval=Distribution.from_dict(tcp["new_flows_per_interval"]),
        flow_volume_up=Distribution.from_dict(tcp["flow_volume_up"]),
        flow_volume_down=Distribution.from_dict(tcp["flow_volume_down"]),
        burst_at_entry=bool(tcp.get("burst_at_entry", False)),
        burst_flows=int(tcp.get("burst_flows", 0)),
        burst_volume_up=Distribution.from_dict(tcp["burst_volume_up"]) if "burst_volume_up" in tcp else None,
        spike_period_s=float(spike["period_s"]) if spike else None,
        spike_volume_up=Distribution.from_dict(spike["volume_up"]) if spike else None,
    )
    udp = data["time_critical_udp"]
    time_critical = TimeCriticalProfile(
        active=bool(udp.get("active", True)),
        upstream_pps=Distribution.from_dict(udp["upstream_pps"]),
        downstream_pps=Distribution.from_dict(udp["downstream_pps"]),
    )
    return StateProfile(label, primary, time_critical, Distribution.from_dict(data["duration"]))


def load_profiles(path=None) -> ProfileSet:
    path = Path(path) if path else DEFAULT_PROFILES_PATH
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SynthError(f"Cannot load profiles {path}: {e}", code="BAD_PROFILE")
    defaults = data.get("defaults", {})
    try:
        states = {StateLabel(name): _state_profile(StateLabel(name), entry)
                  for name, entry in data["states"].items()}
        profiles = ProfileSet(
            states=states,
            rtt_ms=Distribution.from_dict(defaults.get("rtt_ms", {"kind": "uniform", "low": 8, "high": 60})),
            flow_duration=Distribution.from_dict(defaults.get("flow_duration", {"kind": "const", "value": 20})),
            udp_up_size=Distribution.from_dict(defaults.get("udp_up_size", {"kind": "const", "value": 90})),
            udp_down_size=Distribution.from_dict(defaults.get("udp_down_size", {"kind": "const", "value": 180})),
            heartbeat_s=float(defaults.get("heartbeat_s", 20)),
        )
    except (KeyError, ValueError) as e:
        raise SynthError(f"Profiles file {path} is malformed: {e}", code="BAD_PROFILE")
    logger.debug(f"Loaded {len(states)} state profiles from {path}")
    return profiles
