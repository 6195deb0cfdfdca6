# vrsense/session/manager.py

import logging
from typing import Callable, Dict, List, Optional, Tuple

from vrsense.flowtable.table import FlowKey
from vrsense.session.attributes import UPSTREAM_ONLY
from vrsense.session.context import (
    DEFAULT_CANDIDATE_TTL, DEFAULT_INTERVAL_LEN, DEFAULT_PAST_STATES, DEFAULT_SESSION_IDLE_TIMEOUT,
    SessionContext, SessionEvent, SessionReport, UdpAttachment,
)
from vrsense.session.states import DomainType
from vrsense.signatures.model import SignatureSet

logger = logging.getLogger(__name__)


class SessionManager:
    """
    Candidate prefix sets and live sessions for the users of one shard.

    Session detection relies only on primary-domain detections; UDP
    detections attach to an existing session or are counted as orphans.
    """

    def __init__(self, signatures: SignatureSet, interval_len: float = DEFAULT_INTERVAL_LEN,
                 past_states: int = DEFAULT_PAST_STATES, idle_timeout: float = DEFAULT_SESSION_IDLE_TIMEOUT,
                 candidate_ttl: float = DEFAULT_CANDIDATE_TTL, attribute_direction: str = UPSTREAM_ONLY,
                 count_idle_flows: bool = True, classify_factory: Optional[Callable] = None,
                 as_labeler: Optional[Callable[[str], str]] = None):
        self.signatures = signatures
        self.interval_len = interval_len
        self.past_states = past_states
        self.idle_timeout = idle_timeout
        self.candidate_ttl = candidate_ttl
        self.attribute_direction = attribute_direction
        self.count_idle_flows = count_idle_flows
        self.classify_factory = classify_factory
        self.as_labeler = as_labeler

        # (user_ip, metaverse) -> {prefix: last match time} / {flow key: match time}
        self.candidates: Dict[Tuple[str, str], Dict[str, float]] = {}
        self.candidate_flows: Dict[Tuple[str, str], Dict[FlowKey, float]] = {}
        self.sessions: Dict[Tuple[str, str], SessionContext] = {}
        self.flow_index: Dict[FlowKey, SessionContext] = {}
        self.orphaned = 0
        self.sessions_started = 0
        self.sessions_closed = 0

    def session_for_flow(self, key: FlowKey) -> Optional[SessionContext]:
        return self.flow_index.get(key)

    def _expire_candidates(self, owner: Tuple[str, str], now: float) -> None:
        prefixes = self.candidates.get(owner, {})
        for prefix in [p for p, ts in prefixes.items() if now - ts > self.candidate_ttl]:
            del prefixes[prefix]
        flows = self.candidate_flows.get(owner, {})
        for key in [k for k, ts in flows.items() if now - ts > self.candidate_ttl]:
            del flows[key]

    def register_primary_detection(self, user_ip: str, metaverse: str, prefix: str,
                                   flow_key: FlowKey, now: float) -> SessionEvent:
        owner = (user_ip, metaverse)
        session = self.sessions.get(owner)
        if session is not None:
            session.active_prefixes.add(prefix)
            session.attach_flow(flow_key, DomainType.PRIMARY, now)
            self.flow_index[flow_key] = session
            return SessionEvent.NONE

        self._expire_candidates(owner, now)
        prefixes = self.candidates.setdefault(owner, {})
        prefixes[prefix] = now
        self.candidate_flows.setdefault(owner, {})[flow_key] = now

        required = self.signatures.initial_hs_prefixes.get(metaverse, ())
        if not required or not set(required) <= set(prefixes):
            return SessionEvent.NONE

        session = SessionContext(
            user_ip, metaverse, now, interval_len=self.interval_len, past_states=self.past_states,
            idle_timeout=self.idle_timeout, attribute_direction=self.attribute_direction,
            count_idle_flows=self.count_idle_flows,
            classify=self.classify_factory(metaverse) if self.classify_factory else None,
        )
        session.active_prefixes = set(prefixes)
        for key, matched_at in self.candidate_flows.pop(owner).items():
            session.attach_flow(key, DomainType.PRIMARY, matched_at)
            self.flow_index[key] = session
        del self.candidates[owner]
        self.sessions[owner] = session
        self.sessions_started += 1
        logger.info(f"Session started: {user_ip} {metaverse} at {now:.6f} "
                    f"(prefixes {sorted(session.active_prefixes)})")
        return SessionEvent.SESSION_STARTED

    def register_udp_detection(self, user_ip: str, metaverse: str, flow_key: FlowKey,
                               now: float) -> UdpAttachment:
        session = self.sessions.get((user_ip, metaverse))
        if session is None:
            self.orphaned += 1
            logger.debug(f"Orphaned {metaverse} UDP flow {flow_key}: no session for {user_ip}")
            return UdpAttachment.ORPHANED
        session.attach_flow(flow_key, DomainType.TIME_CRITICAL, now)
        self.flow_index[flow_key] = session
        return UdpAttachment.TRACKED

    def detach(self, key: FlowKey) -> None:
        session = self.flow_index.pop(key, None)
        if session is not None:
            session.detach_flow(key)

    def _close(self, owner: Tuple[str, str], now: float) -> SessionReport:
        session = self.sessions.pop(owner)
        for key in session.tracked_flows:
            if self.flow_index.get(key) is session:
                del self.flow_index[key]
        self.sessions_closed += 1
        return session.close(now, self.as_labeler)

    def tick(self, now: float) -> List[SessionReport]:
        """Close finished intervals everywhere and retire idle sessions."""
        reports = []
        for owner in list(self.sessions):
            session = self.sessions[owner]
            session.advance(now)
            if session.is_idle(now):
                reports.append(self._close(owner, now))
        for owner in list(self.candidates):
            self._expire_candidates(owner, now)
            if not self.candidates[owner]:
                del self.candidates[owner]
                self.candidate_flows.pop(owner, None)
        return reports

    def close_all(self, now: Optional[float] = None) -> List[SessionReport]:
        reports = []
        for owner in list(self.sessions):
            reports.append(self._close(owner, now if now is not None else self.sessions[owner].last_activity))
        return reports


def register_primary_detection(manager: SessionManager, user_ip, metaverse, prefix, flow_key, now) -> SessionEvent:
    return manager.register_primary_detection(user_ip, metaverse, prefix, flow_key, now)


def register_udp_detection(manager: SessionManager, user_ip, metaverse, flow_key, now) -> UdpAttachment:
    return manager.register_udp_detection(user_ip, metaverse, flow_key, now)
