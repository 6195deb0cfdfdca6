from vrsense.session.states import ALLOWED_STATES, DomainType, Provenance, StateLabel, allowed_states  # noqa: F401
from vrsense.session.attributes import (  # noqa: F401
    ATTRIBUTE_COLUMNS, ATTRIBUTE_NAMES, AttributeVector, FlowIntervalCounters, IntervalStats, compute_attributes,
)
from vrsense.session.context import (  # noqa: F401
    ClassificationResult, SessionContext, SessionEvent, SessionReport, TimelineEntry, UdpAttachment,
    accumulate, close_session,
)
from vrsense.session.manager import SessionManager, register_primary_detection, register_udp_detection  # noqa: F401
