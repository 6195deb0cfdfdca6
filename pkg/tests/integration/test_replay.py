import pytest
from apscheduler.schedulers.background import BackgroundScheduler

from vrsense.classifier.stateful import ModelRegistry
from vrsense.pipeline.config import EngineConfig
from vrsense.pipeline.engine import Engine, run
from vrsense.pipeline.metrics import EngineMetrics
from vrsense.pipeline.replay import TICK_JOB_ID, PacedReplaySource, schedule_ticks, tick_job, unschedule_ticks
from vrsense.synth.packets import emit_pcap

LOCAL = ("10.0.0.0/8",)


class FakeClock:
    def __init__(self):
        self.now = 0.0
        self.slept = []

    def __call__(self):
        return self.now

    def sleep(self, seconds):
        self.slept.append(seconds)
        self.now += seconds


@pytest.fixture
def pcap(tmp_path, vrchat_session):
    return emit_pcap(vrchat_session[0], tmp_path / "vrchat.pcap")


def test_replay_keeps_recorded_pace(pcap, vrchat_session):
    frames, _ = vrchat_session
    clock = FakeClock()
    replay = PacedReplaySource(pcap, LOCAL, speed=10.0, sleep=clock.sleep, clock=clock)
    assert replay.current_time() is None

    stamps = [ts for ts, _ in replay]
    assert len(stamps) == len(frames)
    assert clock.now == pytest.approx((stamps[-1] - stamps[0]) / 10.0, abs=1e-6)
    assert all(s > 0 for s in clock.slept)
    assert replay.current_time() == pytest.approx(stamps[-1], abs=1e-6)


def test_replay_rejects_bad_speed(pcap):
    with pytest.raises(ValueError):
        PacedReplaySource(pcap, LOCAL, speed=0.0)


def test_paced_replay_matches_file_run(pcap, signatures):
    clock = FakeClock()
    replay = PacedReplaySource(pcap, LOCAL, speed=1000.0, sleep=clock.sleep, clock=clock)
    paced = Engine(EngineConfig(), signatures, ModelRegistry()).run(replay.as_source())
    direct, _ = run(EngineConfig(), pcap, signatures, ModelRegistry())
    assert [r.to_dict() for r in paced] == [r.to_dict() for r in direct]


def test_tick_job_waits_for_first_frame(pcap):
    class Recorder:
        def __init__(self):
            self.ticks = []

        def tick(self, now):
            self.ticks.append(now)

        def snapshot_metrics(self):
            return EngineMetrics()

    clock = FakeClock()
    replay = PacedReplaySource(pcap, LOCAL, sleep=clock.sleep, clock=clock)
    engine = Recorder()
    tick_job(engine, replay)
    assert engine.ticks == []

    first_ts, _ = next(iter(replay))
    clock.now += 2.0
    tick_job(engine, replay)
    assert engine.ticks == [pytest.approx(first_ts + 2.0)]


def test_tick_job_swallows_engine_failures(pcap):
    class Broken:
        def tick(self, now):
            raise RuntimeError("boom")

    clock = FakeClock()
    replay = PacedReplaySource(pcap, LOCAL, sleep=clock.sleep, clock=clock)
    next(iter(replay))
    tick_job(Broken(), replay)


def test_schedule_and_unschedule(pcap, signatures):
    scheduler = BackgroundScheduler(daemon=True)
    replay = PacedReplaySource(pcap, LOCAL)
    engine = Engine(EngineConfig(), signatures, ModelRegistry())
    try:
        schedule_ticks(scheduler, engine, replay, 5.0)
        assert scheduler.running
        assert scheduler.get_job(TICK_JOB_ID) is not None
        unschedule_ticks(scheduler)
        assert scheduler.get_job(TICK_JOB_ID) is None
        unschedule_ticks(scheduler)
    finally:
        scheduler.shutdown(wait=False)
