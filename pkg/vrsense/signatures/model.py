# vrsense/signatures/model.py

"""
Signature model: payload-size-sequence fingerprints of primary-domain TLS
flows and time-critical UDP flows, and the versioned JSON file format.
"""

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from vrsense.errors import ModelFileError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PRIMARY_SEQ_LEN = (3, 6)
UDP_SEQ_LEN = (4, 7)
DEFAULT_UDP_PORTS = (5055, 5056, 5058)
DEFAULT_MODEL_PATH = Path(__file__).parent / "default_model.json"


@dataclass(frozen=True)
class PrimarySignature:
    metaverse: str
    domain: str
    prefix: str
    size_seq: Tuple[int, ...]

    def to_dict(self):
        return {"metaverse": self.metaverse, "domain": self.domain, "prefix": self.prefix,
                "seq": list(self.size_seq)}


@dataclass(frozen=True)
class UdpSignature:
    metaverse: str
    port: int
    size_seq: Tuple[int, ...]

    def to_dict(self):
        return {"metaverse": self.metaverse, "port": self.port, "seq": list(self.size_seq)}


@dataclass(frozen=True)
class SignatureSet:
    """
    Immutable once built; shared read-only by every worker. Signatures are
    kept in a canonical order so two sets with the same content compare equal.
    """
    primaries: Tuple[PrimarySignature, ...] = ()
    udp: Tuple[UdpSignature, ...] = ()
    initial_hs_prefixes: Dict[str, Tuple[str, ...]] = field(default_factory=dict)
    version: int = SCHEMA_VERSION
    created_at: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "primaries", tuple(sorted(
            self.primaries, key=lambda s: (s.metaverse, s.prefix, s.size_seq))))
        object.__setattr__(self, "udp", tuple(sorted(
            self.udp, key=lambda s: (s.metaverse, s.port, s.size_seq))))
        object.__setattr__(self, "initial_hs_prefixes", {
            name: tuple(prefixes) for name, prefixes in self.initial_hs_prefixes.items()})

    @property
    def metaverses(self) -> List[str]:
        names = list(self.initial_hs_prefixes)
        for sig in (*self.primaries, *self.udp):
            if sig.metaverse not in names:
                names.append(sig.metaverse)
        return names

    def domain_of(self, metaverse: str) -> str:
        for sig in self.primaries:
            if sig.metaverse == metaverse:
                return sig.domain
        return ""

    def primaries_for(self, metaverse: str) -> List[PrimarySignature]:
        return [s for s in self.primaries if s.metaverse == metaverse]

    def udp_for(self, metaverse: str) -> List[UdpSignature]:
        return [s for s in self.udp if s.metaverse == metaverse]

    @property
    def ports(self) -> Tuple[int, ...]:
        return tuple(sorted({s.port for s in self.udp}))

    @cached_property
    def matcher(self):
        from vrsense.signatures.matcher import SignatureMatcher
        return SignatureMatcher(self)

    def validate(self, port_list=None) -> None:
        """Raise ValueError when the set breaks a model invariant."""
        seen = {}
        for sig in self.primaries:
            lo, hi = PRIMARY_SEQ_LEN
            if not lo <= len(sig.size_seq) <= hi:
                raise ValueError(f"primary signature {sig.prefix} of {sig.metaverse} has length {len(sig.size_seq)}")
            if any(size <= 0 for size in sig.size_seq):
                raise ValueError(f"primary signature {sig.size_seq} has a non-positive size")
            if sig.size_seq in seen:
                raise ValueError(f"primary sequence {list(sig.size_seq)} listed twice "
                                 f"({seen[sig.size_seq]} and {sig.metaverse}/{sig.prefix})")
            seen[sig.size_seq] = f"{sig.metaverse}/{sig.prefix}"

        seen_udp = set()
        for sig in self.udp:
            lo, hi = UDP_SEQ_LEN
            if not lo <= len(sig.size_seq) <= hi:
                raise ValueError(f"UDP signature {sig.size_seq} of {sig.metaverse} has length {len(sig.size_seq)}")
            if any(size <= 0 for size in sig.size_seq):
                raise ValueError(f"UDP signature {sig.size_seq} has a non-positive size")
            if port_list is not None and sig.port not in port_list:
                raise ValueError(f"UDP signature port {sig.port} is not in the configured port list")
            if (sig.port, sig.size_seq) in seen_udp:
                raise ValueError(f"UDP sequence {list(sig.size_seq)} on port {sig.port} listed twice")
            seen_udp.add((sig.port, sig.size_seq))

        for metaverse, prefixes in self.initial_hs_prefixes.items():
            known = {s.prefix for s in self.primaries_for(metaverse)}
            missing = [p for p in prefixes if p not in known]
            if missing:
                raise ValueError(f"{metaverse} requires prefixes {missing} with no primary signature")

    def merged_with(self, other: "SignatureSet") -> "SignatureSet":
        """Union of two sets; metaverses present in ``other`` replace ours."""
        replaced = set(other.metaverses)
        return SignatureSet(
            primaries=[s for s in self.primaries if s.metaverse not in replaced] + list(other.primaries),
            udp=[s for s in self.udp if s.metaverse not in replaced] + list(other.udp),
            initial_hs_prefixes={**{k: v for k, v in self.initial_hs_prefixes.items() if k not in replaced},
                                 **other.initial_hs_prefixes},
            created_at=max(filter(None, (self.created_at, other.created_at)), default=None),
        )

    def to_dict(self) -> Dict:
        metaverses = []
        for name in self.metaverses:
            metaverses.append({
                "name": name,
                "domain": self.domain_of(name),
                "initial_hs_prefixes": list(self.initial_hs_prefixes.get(name, ())),
                "primaries": [{"prefix": s.prefix, "seq": list(s.size_seq)} for s in self.primaries_for(name)],
                "udp": [{"port": s.port, "seq": list(s.size_seq)} for s in self.udp_for(name)],
            })
        return {"version": self.version, "created_at": self.created_at, "metaverses": metaverses}

    @classmethod
    def from_dict(cls, data: Dict) -> "SignatureSet":
        primaries, udp, prefixes = [], [], {}
        for entry in data["metaverses"]:
            name = str(entry["name"])
            domain = str(entry.get("domain", ""))
            if entry.get("initial_hs_prefixes"):
                prefixes[name] = tuple(str(p) for p in entry["initial_hs_prefixes"])
            for p in entry.get("primaries", []):
                primaries.append(PrimarySignature(name, domain, str(p["prefix"]), tuple(int(x) for x in p["seq"])))
            for u in entry.get("udp", []):
                udp.append(UdpSignature(name, int(u["port"]), tuple(int(x) for x in u["seq"])))
        return cls(primaries=primaries, udp=udp, initial_hs_prefixes=prefixes,
                   version=int(data["version"]), created_at=data.get("created_at"))


def save_model(sigset: SignatureSet, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(sigset.to_dict(), indent=2) + "\n")
    except OSError as e:
        raise ModelFileError(f"Cannot write signature model {path}: {e}", code="IO_FAILURE")
    logger.info(f"Saved signature model with {len(sigset.primaries)} primary and "
                f"{len(sigset.udp)} UDP signatures to {path}")
    return path


def load_model(path) -> SignatureSet:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        raise ModelFileError(f"Cannot read signature model {path}: {e}")
    except json.JSONDecodeError as e:
        raise ModelFileError(f"Signature model {path} is not valid JSON: {e}")

    if not isinstance(data, dict) or "version" not in data:
        raise ModelFileError(f"Signature model {path} has no version field")
    if data["version"] != SCHEMA_VERSION:
        raise ModelFileError(
            f"Signature model {path} has schema version {data['version']}, expected {SCHEMA_VERSION}",
            code="SCHEMA_MISMATCH",
        )
    try:
        sigset = SignatureSet.from_dict(data)
        sigset.validate()
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError(f"Signature model {path} is corrupt: {e}")
    logger.info(f"Loaded signature model {path} ({', '.join(sigset.metaverses) or 'empty'})")
    return sigset


def default_signature_set() -> SignatureSet:
    """The published handshake and UDP sequences for the four measured apps."""
    return load_model(DEFAULT_MODEL_PATH)
