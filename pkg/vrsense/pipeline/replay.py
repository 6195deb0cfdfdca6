# vrsense/pipeline/replay.py

"""
Live mode stand-in: replay a capture file at its recorded pace and tick the
engine on wall-clock time from a background scheduler job.
"""

import logging
import time
from typing import Callable, Iterator, Optional, Tuple

from apscheduler.schedulers.background import BackgroundScheduler

from vrsense.capture.pcap_reader import CaptureReader
from vrsense.capture.records import CaptureSource

logger = logging.getLogger(__name__)

TICK_JOB_ID = "vrsense-engine-tick"


class PacedReplaySource:
    """
    Yields ``(timestamp, frame)`` from a pcap, sleeping so that frames come
    out no faster than their timestamps allow (``speed`` > 1 replays faster).
    """

    def __init__(self, path, local_prefixes, speed: float = 1.0,
                 sleep: Callable[[float], None] = time.sleep, clock: Callable[[], float] = time.monotonic):
        if speed <= 0:
            raise ValueError("speed must be > 0")
        self.reader = CaptureReader(CaptureSource.from_file(path, local_prefixes))
        self.speed = speed
        self.sleep = sleep
        self.clock = clock
        self._origin: Optional[Tuple[float, float]] = None

    @property
    def link_type(self):
        return self.reader.link_type

    @property
    def stats(self):
        return self.reader.stats

    def current_time(self) -> Optional[float]:
        """Capture time corresponding to now, or None before the first frame."""
        if self._origin is None:
            return None
        first_ts, started = self._origin
        return first_ts + (self.clock() - started) * self.speed

    def __iter__(self) -> Iterator[Tuple[float, bytes]]:
        for ts, frame in self.reader.frames():
            if self._origin is None:
                self._origin = (ts, self.clock())
            wait = (ts - self.current_time()) / self.speed
            if wait > 0:
                self.sleep(wait)
            yield ts, frame
        self.reader.close()

    def as_source(self) -> CaptureSource:
        return CaptureSource.from_frames(self, self.reader.source.local_prefixes, self.link_type)


def tick_job(engine, source: PacedReplaySource) -> None:
    now = source.current_time()
    if now is None:
        return
    try:
        engine.tick(now)
        metrics = engine.snapshot_metrics()
        logger.info(f"Live tick at {now:.3f}: {metrics.records} records, {metrics.sessions_active} active "
                    f"sessions, {metrics.sessions_closed} closed, {metrics.drops} drops")
    except Exception as e:
        logger.error(f"Engine tick failed: {e}", exc_info=True)


def schedule_ticks(scheduler: BackgroundScheduler, engine, source: PacedReplaySource, seconds: float) -> None:
    scheduler.add_job(func=tick_job, trigger="interval", seconds=seconds, args=[engine, source],
                      id=TICK_JOB_ID, replace_existing=True, max_instances=1)
    if not scheduler.running:
        scheduler.start()
    logger.info(f"Scheduled engine ticks every {seconds}s")


def unschedule_ticks(scheduler: BackgroundScheduler) -> None:
    if scheduler.get_job(TICK_JOB_ID) is not None:
        scheduler.remove_job(TICK_JOB_ID)
