# vrsense/session/states.py

from enum import Enum
from typing import Dict, List


class StateLabel(Enum):
    """User activity states. Declaration order is the tie-break order."""
    HS = "HS"
    MH = "MH"
    SUE = "SUE"
    SPE = "SPE"
    AT = "AT"
    CC = "CC"
    UNKNOWN = "UNKNOWN"

    @property
    def description(self) -> str:
        return STATE_DESCRIPTIONS[self]


class DomainType(Enum):
    PRIMARY = "PRIMARY"
    TIME_CRITICAL = "TIME_CRITICAL"


class Provenance(Enum):
    STATEFUL = "STATEFUL"
    STATELESS_FALLBACK = "STATELESS_FALLBACK"
    NONE = "NONE"


STATE_DESCRIPTIONS = {
    StateLabel.HS: "home space",
    StateLabel.MH: "main hub",
    StateLabel.SUE: "separate user-created event",
    StateLabel.SPE: "separate provider-created event",
    StateLabel.AT: "asset trading",
    StateLabel.CC: "content creation",
    StateLabel.UNKNOWN: "not classified",
}

STATE_ORDER = {label: i for i, label in enumerate(StateLabel)}

ALLOWED_STATES: Dict[str, List[StateLabel]] = {
    "Multiverse": [StateLabel.HS, StateLabel.MH, StateLabel.SUE, StateLabel.SPE, StateLabel.AT],
    "VRChat": [StateLabel.HS, StateLabel.SUE],
    "Rec Room": [StateLabel.HS, StateLabel.MH, StateLabel.SUE, StateLabel.AT, StateLabel.CC],
    "AltSpaceVR": [StateLabel.HS, StateLabel.MH, StateLabel.SUE],
}

KNOWN_STATES = [s for s in StateLabel if s is not StateLabel.UNKNOWN]


def allowed_states(metaverse: str) -> List[StateLabel]:
    """Label space for an app, in enum order. Unknown apps may use every state."""
    allowed = ALLOWED_STATES.get(metaverse, KNOWN_STATES)
    return sorted(allowed, key=STATE_ORDER.get)
