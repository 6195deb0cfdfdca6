# vrsense/pipeline/metrics.py

import threading
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

STAGES = ("session_detection", "runtime_stats", "classification")


@dataclass
class StageTimer:
    """Seconds spent per stage within the current inference cycle, and the finished cycles in ms."""
    current: Dict[str, float] = field(default_factory=lambda: {s: 0.0 for s in STAGES})
    cycles: Dict[str, List[float]] = field(default_factory=lambda: {s: [] for s in STAGES})

    def add(self, stage: str, seconds: float) -> None:
        self.current[stage] += seconds

    def close_cycle(self, sessions: int = 1) -> None:
        """Record the cycle as milliseconds per session (nothing is recorded for an empty cycle)."""
        if sessions > 0:
            for stage in STAGES:
                self.cycles[stage].append(self.current[stage] * 1000.0 / sessions)
        self.current = {s: 0.0 for s in STAGES}

    def summary(self) -> Dict[str, Dict[str, float]]:
        out = {}
        for stage, values in self.cycles.items():
            arr = np.asarray(values, dtype=np.float64)
            out[stage] = {
                "mean_ms": float(arr.mean()) if arr.size else 0.0,
                "std_ms": float(arr.std()) if arr.size else 0.0,
                "cycles": int(arr.size),
            }
        return out


@dataclass
class EngineMetrics:
    packets: int = 0
    records: int = 0
    stage1_candidates: int = 0
    stage2_candidates: int = 0
    primary_matches: int = 0
    udp_matches: int = 0
    flows_tracked: int = 0
    sessions_active: int = 0
    sessions_started: int = 0
    sessions_closed: int = 0
    orphaned_udp: int = 0
    fallbacks: int = 0
    drops: int = 0
    table_drops: int = 0
    decode_errors: int = 0
    packet_errors: int = 0
    timer: StageTimer = field(default_factory=StageTimer)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def merge(self, other: "EngineMetrics") -> None:
        with self._lock:
            for name in self.counter_names():
                setattr(self, name, getattr(self, name) + getattr(other, name))
            for stage in STAGES:
                self.timer.cycles[stage].extend(other.timer.cycles[stage])

    @staticmethod
    def counter_names() -> List[str]:
        return [name for name in EngineMetrics.__dataclass_fields__ if name not in ("timer", "_lock")]

    def to_dict(self) -> Dict:
        data = {name: getattr(self, name) for name in self.counter_names()}
        data["stage_ms_per_cycle"] = self.timer.summary()
        return data

