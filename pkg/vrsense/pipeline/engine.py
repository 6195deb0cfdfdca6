# vrsense/pipeline/engine.py

"""
The three-stage engine.

Stage 1 matches TCP flows to the primary ports against the primary
signatures and detects sessions; stage 2 matches UDP flows to the listed
ports; stage 3 accounts every packet of a tracked flow into its session and
classifies each closed interval.

Packets are sharded by a hash of the user IP, so one worker owns all state
of a user and no lock is shared across workers.
"""

import json
import logging
import queue
import threading
import time
import zlib
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from vrsense.capture.pcap_reader import CaptureReader, open_capture
from vrsense.capture.records import CaptureSource, Direction, PacketRecord, Transport
from vrsense.classifier.stateful import ModelRegistry
from vrsense.errors import ClassifierError, TableCapacityExceeded, VrsenseError
from vrsense.flowtable.table import FlowKey, FlowState, FlowTable, FlowUpdate, MatchStatus
from vrsense.pipeline.config import EngineConfig
from vrsense.pipeline.latency import ASMap
from vrsense.pipeline.metrics import EngineMetrics
from vrsense.session.context import SessionEvent, SessionReport
from vrsense.session.manager import SessionManager
from vrsense.signatures.matcher import MatchKind, MatchOutcome
from vrsense.signatures.model import SignatureSet, default_signature_set, load_model
from vrsense.utils.helpers import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

STAGE_PRIMARY = 1
STAGE_UDP = 2
_STOP = object()

ReportListener = Callable[[List[SessionReport]], None]


class ShardWorker:
    """Flow table, sessions and counters for the users hashed to one shard."""

    def __init__(self, index: int, config: EngineConfig, signatures: SignatureSet, registry: ModelRegistry,
                 emit: ReportListener, as_labeler: Optional[Callable[[str], str]] = None,
                 keep_flow_log: bool = False):
        self.index = index
        self.config = config
        self.matcher = signatures.matcher
        self.table = FlowTable(config.k_max, config.idle_timeout_candidate, config.idle_timeout_tracked,
                               max(1, config.max_flows // config.shards))
        self.manager = SessionManager(
            signatures, interval_len=config.interval_len,
            past_states=max(config.past_states, registry.max_past_states),
            idle_timeout=config.session_idle_timeout, candidate_ttl=config.candidate_ttl,
            attribute_direction=config.attribute_direction, count_idle_flows=config.count_idle_flows,
            classify_factory=registry.classify_factory, as_labeler=as_labeler,
        )
        self.metrics = EngineMetrics()
        self.flow_log: Optional[List[Dict]] = [] if keep_flow_log else None
        self.emit = emit
        self.lock = threading.Lock()
        self.clock: Optional[float] = None
        self._next_tick: Optional[float] = None
        self._next_cycle: Optional[float] = None

    def stage_for(self, pkt: PacketRecord) -> Optional[int]:
        """Which detection stage may open a flow for this packet, if any."""
        if pkt.direction is not Direction.UPSTREAM or pkt.internal:
            return None
        if pkt.transport is Transport.TCP and pkt.dst_port in self.config.primary_ports:
            return STAGE_PRIMARY
        if (pkt.transport is Transport.UDP and self.config.enable_udp_stage
                and pkt.dst_port in self.config.udp_ports):
            return STAGE_UDP
        return None

    def process(self, pkt: PacketRecord) -> None:
        with self.lock:
            self._advance_clock(pkt.timestamp)
            self.metrics.records += 1
            try:
                self._handle(pkt)
            except ClassifierError:
                raise
            except (VrsenseError, KeyError, ValueError) as e:
                self.metrics.packet_errors += 1
                logger.warning(f"Shard {self.index}: packet at {pkt.timestamp:.6f} skipped: {e}")

    def tick(self, now: float) -> None:
        with self.lock:
            self._tick(max(now, self.clock or now))

    def _advance_clock(self, now: float) -> None:
        if self._next_tick is None:
            self._next_tick = now + self.config.tick_seconds
            self._next_cycle = now + self.config.interval_len
        self.clock = now if self.clock is None else max(self.clock, now)
        if now >= self._next_tick:
            self._tick(now)
            self._next_tick = now + self.config.tick_seconds

    def _handle(self, pkt: PacketRecord) -> None:
        key = FlowKey.from_packet(pkt)
        state = self.table.lookup(key)
        if state is not None and state.match_status is MatchStatus.MATCHED:
            self._account(pkt, key, state)
            return
        if state is None and self.stage_for(pkt) is None:
            return

        started = time.perf_counter()
        try:
            update, state = self.table.upsert(pkt)
        except TableCapacityExceeded as e:
            self.metrics.table_drops += 1
            logger.debug(str(e))
            return
        if update is FlowUpdate.CREATED:
            if key.transport is Transport.TCP:
                self.metrics.stage1_candidates += 1
            else:
                self.metrics.stage2_candidates += 1
        if (update in (FlowUpdate.CREATED, FlowUpdate.APPENDED_SIZE)
                and state.match_status is MatchStatus.PENDING and state.upstream_size_seq):
            self._match(pkt, key, state)
        self.metrics.timer.add("session_detection", time.perf_counter() - started)

    def _match(self, pkt: PacketRecord, key: FlowKey, state: FlowState) -> None:
        seq = state.upstream_size_seq
        if key.transport is Transport.TCP:
            outcome = self.matcher.match_primary(seq)
        else:
            outcome = self.matcher.match_udp(key.dst_port, seq)

        if outcome.kind is MatchKind.MATCH:
            self.table.mark_matched(state, outcome.signature)
            self.metrics.flows_tracked += 1
            self._register(pkt, key, outcome)
        elif outcome.kind is MatchKind.REJECT or len(seq) >= self.table.k_max:
            self.table.mark_rejected(state)

    def _register(self, pkt: PacketRecord, key: FlowKey, outcome: MatchOutcome) -> None:
        user_ip = key.src_ip
        if key.transport is Transport.UDP:
            self.metrics.udp_matches += 1
            self.manager.register_udp_detection(user_ip, outcome.metaverse, key, pkt.timestamp)
            return

        self.metrics.primary_matches += 1
        event = self.manager.register_primary_detection(user_ip, outcome.metaverse, outcome.prefix,
                                                        key, pkt.timestamp)
        session = self.manager.sessions.get((user_ip, outcome.metaverse))
        if session is None:
            return
        keys = list(session.flow_info) if event is SessionEvent.SESSION_STARTED else [key]
        for flow_key in keys:
            flow = self.table.lookup(flow_key)
            if flow is not None:
                session.update_rtt(flow_key, flow.rtt_estimate)

    def _account(self, pkt: PacketRecord, key: FlowKey, state: FlowState) -> None:
        started = time.perf_counter()
        self.table.upsert(pkt)
        self.metrics.timer.add("runtime_stats", time.perf_counter() - started)
        session = self.manager.session_for_flow(key)
        if session is None:
            return
        session.accumulate(pkt, key)
        if key.transport is Transport.TCP:
            session.update_rtt(key, state.rtt_estimate)

    def _tick(self, now: float) -> None:
        for state in self.table.evict_idle(now):
            self.manager.detach(state.key)
            self._log_flow(state)
        self._emit(self.manager.tick(now))
        if self._next_cycle is not None and now >= self._next_cycle:
            self._close_cycle()
            self._next_cycle = now + self.config.interval_len

    def _close_cycle(self) -> None:
        sessions = list(self.manager.sessions.values())
        timer = self.metrics.timer
        for session in sessions:
            timer.add("runtime_stats", session.stats_seconds)
            timer.add("classification", session.classify_seconds)
            session.stats_seconds = session.classify_seconds = 0.0
        timer.close_cycle(len(sessions))

    def _log_flow(self, state: FlowState) -> None:
        if self.flow_log is not None:
            self.flow_log.append(state.to_log())

    def _emit(self, reports: List[SessionReport]) -> None:
        if not reports:
            return
        self.metrics.fallbacks += sum(r.fallbacks for r in reports)
        self.emit(reports)

    def finish(self) -> None:
        """End of stream: close every session and flush the flow table."""
        with self.lock:
            if self.clock is not None:
                self._tick(self.clock)
            self._close_cycle()
            self._emit(self.manager.close_all())
            for state in self.table.drain():
                self._log_flow(state)

    def counters(self) -> EngineMetrics:
        m = self.metrics
        m.sessions_started = self.manager.sessions_started
        m.sessions_closed = self.manager.sessions_closed
        m.sessions_active = len(self.manager.sessions)
        m.orphaned_udp = self.manager.orphaned
        return m


class Engine:
    """
    Fans packets out to shard workers, inline or on one thread per shard.

    In threaded mode each shard reads a bounded queue; when a queue is full
    the packet is dropped and counted instead of blocking the ingest loop.
    """

    def __init__(self, config: EngineConfig, signatures: Optional[SignatureSet] = None,
                 registry: Optional[ModelRegistry] = None, keep_flow_log: bool = False):
        self.config = config
        if signatures is None:
            signatures = load_model(config.signatures_path) if config.signatures_path else default_signature_set()
        self.signatures = signatures
        if registry is None:
            registry = ModelRegistry.from_directory(config.model_dir, signatures.metaverses, config.threshold)
        self.registry = registry
        as_labeler = ASMap.load(config.as_map_path).label if config.as_map_path else None

        self.metrics = EngineMetrics()
        self.reports: List[SessionReport] = []
        self.listeners: List[ReportListener] = []
        self._report_lock = threading.Lock()
        self.workers = [
            ShardWorker(i, config, signatures, registry, self._collect, as_labeler, keep_flow_log)
            for i in range(config.shards)
        ]
        self._queues: List[queue.Queue] = []
        self._threads: List[threading.Thread] = []
        self._failure: Optional[BaseException] = None
        self.capture_stats = None
        logger.info(f"Engine ready: {config.shards} shard(s), apps {signatures.metaverses}, "
                    f"classifiers for {sorted(registry.models) or 'none'}")

    def add_listener(self, listener: ReportListener) -> None:
        self.listeners.append(listener)

    def _collect(self, reports: List[SessionReport]) -> None:
        with self._report_lock:
            self.reports.extend(reports)
            for listener in self.listeners:
                listener(reports)

    def shard_for(self, user_ip: str) -> int:
        return zlib.crc32(user_ip.encode()) % len(self.workers)

    @property
    def threaded(self) -> bool:
        return bool(self._threads)

    def start(self) -> None:
        if not self.config.threaded or self._threads:
            return
        for worker in self.workers:
            inbox = queue.Queue(maxsize=self.config.queue_size)
            thread = threading.Thread(target=self._drain, args=(worker, inbox),
                                      name=f"vrsense-shard-{worker.index}", daemon=True)
            self._queues.append(inbox)
            self._threads.append(thread)
            thread.start()

    def _drain(self, worker: ShardWorker, inbox: queue.Queue) -> None:
        while True:
            item = inbox.get()
            if item is _STOP:
                return
            if self._failure is not None:
                continue
            try:
                worker.process(item)
            except Exception as e:
                logger.error(f"Shard {worker.index} failed: {e}", exc_info=True)
                self._failure = e

    def process(self, pkt: PacketRecord) -> None:
        if pkt.transport is Transport.OTHER:
            return
        worker = self.workers[self.shard_for(pkt.user_ip)]
        if not self._queues:
            worker.process(pkt)
            return
        try:
            self._queues[worker.index].put_nowait(pkt)
        except queue.Full:
            self.metrics.drops += 1
            if self.metrics.drops == 1 or self.metrics.drops % 10_000 == 0:
                logger.warning(f"Shard {worker.index} queue full; {self.metrics.drops} packets dropped so far")

    def tick(self, now: float) -> None:
        """Advance every shard to ``now`` (wall-clock driven ticks in live mode)."""
        for worker in self.workers:
            worker.tick(now)

    def _stop_threads(self) -> None:
        for inbox in self._queues:
            inbox.put(_STOP)
        for thread in self._threads:
            thread.join()
        self._queues, self._threads = [], []

    def finish(self) -> List[SessionReport]:
        self._stop_threads()
        if self._failure is not None:
            raise self._failure
        for worker in self.workers:
            worker.finish()
        return self.results()

    def run(self, source) -> List[SessionReport]:
        reader = self.reader_for(source)
        self.start()
        try:
            for pkt in reader:
                self.process(pkt)
        except BaseException:
            self._stop_threads()
            raise
        self.capture_stats = reader.stats
        self.metrics.packets += reader.stats.frames
        self.metrics.decode_errors += (reader.stats.non_ip + reader.stats.unsupported_vlan
                                       + reader.stats.undecodable + reader.stats.truncated)
        reports = self.finish()
        logger.info(f"Run finished: {len(reports)} session reports, {reader.stats.frames} frames")
        return reports

    def reader_for(self, source) -> CaptureReader:
        if isinstance(source, CaptureReader):
            return source
        if isinstance(source, (str, Path)):
            source = CaptureSource.from_file(source, self.config.local_prefixes)
        return open_capture(source)

    def results(self) -> List[SessionReport]:
        with self._report_lock:
            return sorted(self.reports, key=lambda r: (r.start, r.user, r.app))

    def flow_log(self) -> List[Dict]:
        records = [record for worker in self.workers for record in (worker.flow_log or [])]
        return sorted(records, key=lambda r: (r["first_seen"], r["user"], str(sorted(r["key"].items()))))

    def snapshot_metrics(self) -> EngineMetrics:
        total = EngineMetrics()
        total.merge(self.metrics)
        for worker in self.workers:
            total.merge(worker.counters())
        return total

    def active_sessions(self) -> List[Dict]:
        sessions = []
        for worker in self.workers:
            for session in list(worker.manager.sessions.values()):
                sessions.append({
                    "user": session.user_ip,
                    "app": session.metaverse,
                    "start": session.session_start,
                    "state": session.current_state.value,
                    "intervals": len(session.state_timeline),
                    "flows": len(session.flow_info),
                })
        return sorted(sessions, key=lambda s: (s["start"], s["user"], s["app"]))


def run(config: EngineConfig, source, signatures: Optional[SignatureSet] = None,
        registry: Optional[ModelRegistry] = None,
        keep_flow_log: bool = False) -> Tuple[List[SessionReport], EngineMetrics]:
    engine = Engine(config, signatures, registry, keep_flow_log)
    reports = engine.run(source)
    return reports, engine.snapshot_metrics()


def write_reports(reports: Iterable[SessionReport], path) -> int:
    ordered = sorted(reports, key=lambda r: (r.start, r.user, r.app))
    count = write_jsonl((r.to_dict() for r in ordered), path)
    logger.info(f"Wrote {count} session reports to {path}")
    return count


def read_reports(path) -> List[SessionReport]:
    return [SessionReport.from_dict(data) for data in read_jsonl(path)]


class ReportSink:
    """Appends reports to a JSONL file as sessions close (live mode)."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.written = 0

    def __call__(self, reports: List[SessionReport]) -> None:
        with self.path.open("a") as fh:
            for report in reports:
                fh.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
                self.written += 1
