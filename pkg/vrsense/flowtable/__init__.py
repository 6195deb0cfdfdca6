from vrsense.flowtable.table import (  # noqa: F401
    FlowKey, FlowState, FlowTable, FlowUpdate, MatchStatus, estimate_rtt, evict_idle, upsert_packet,
)
