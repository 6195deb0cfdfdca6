# vrsense/signatures/matcher.py

"""
Exact-match runtime matcher.

Signatures are loaded into tries keyed by successive payload sizes, one for
primary flows and one per UDP port, so PENDING and REJECT fall straight out
of the walk. Matching never looks at SNI.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence, Union

from vrsense.signatures.model import PrimarySignature, SignatureSet, UdpSignature


class MatchKind(Enum):
    MATCH = "MATCH"
    PENDING = "PENDING"
    REJECT = "REJECT"


@dataclass(frozen=True)
class MatchOutcome:
    kind: MatchKind
    signature: Optional[Union[PrimarySignature, UdpSignature]] = None

    @property
    def metaverse(self) -> Optional[str]:
        return self.signature.metaverse if self.signature else None

    @property
    def domain(self) -> Optional[str]:
        return getattr(self.signature, "domain", None)

    @property
    def prefix(self) -> Optional[str]:
        return getattr(self.signature, "prefix", None)


PENDING = MatchOutcome(MatchKind.PENDING)
REJECT = MatchOutcome(MatchKind.REJECT)


class _Node:
    __slots__ = ("children", "signature")

    def __init__(self):
        self.children: Dict[int, "_Node"] = {}
        self.signature = None


def _insert(root: _Node, sig) -> None:
    node = root
    for size in sig.size_seq:
        node = node.children.setdefault(size, _Node())
    # first signature wins; SignatureSet.validate rejects duplicates
    if node.signature is None:
        node.signature = sig


def _walk(root: _Node, seq: Sequence[int]) -> MatchOutcome:
    node = root
    for size in seq:
        node = node.children.get(size)
        if node is None:
            return REJECT
    if node.signature is not None:
        return MatchOutcome(MatchKind.MATCH, node.signature)
    return PENDING if node.children else REJECT


class SignatureMatcher:
    def __init__(self, sigset: SignatureSet):
        self.primary_root = _Node()
        for sig in sigset.primaries:
            _insert(self.primary_root, sig)
        self.udp_roots: Dict[int, _Node] = {}
        for sig in sigset.udp:
            _insert(self.udp_roots.setdefault(sig.port, _Node()), sig)

    def match_primary(self, seq: Sequence[int]) -> MatchOutcome:
        return _walk(self.primary_root, seq)

    def match_udp(self, port: int, seq: Sequence[int]) -> MatchOutcome:
        root = self.udp_roots.get(port)
        if root is None:
            return REJECT
        return _walk(root, seq)


def match_primary(sigset: SignatureSet, seq: Sequence[int]) -> MatchOutcome:
    return sigset.matcher.match_primary(seq)


def match_udp(sigset: SignatureSet, port: int, seq: Sequence[int]) -> MatchOutcome:
    return sigset.matcher.match_udp(port, seq)
