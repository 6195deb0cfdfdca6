# vrsense/pipeline/bench.py

import logging
import math
import time
from typing import Dict, Optional

from vrsense.classifier.stateful import ModelRegistry
from vrsense.pipeline.config import EngineConfig
from vrsense.pipeline.corpus import quick_registry, replay_frames, synth_sessions
from vrsense.pipeline.metrics import STAGES
from vrsense.signatures.model import SignatureSet, default_signature_set
from vrsense.synth.profiles import ProfileSet

logger = logging.getLogger(__name__)


def bench(config: EngineConfig, n_sessions: int, seed: int = 0, duration: float = 120.0,
          signatures: Optional[SignatureSet] = None, registry: Optional[ModelRegistry] = None,
          profiles: Optional[ProfileSet] = None) -> Dict:
    """
    Replay ``n_sessions`` concurrent synthetic sessions on a single worker and
    report the mean and standard deviation, per session and per inference
    cycle, of the time spent in session detection, runtime statistics and
    classification.

    Without a registry, small models are trained first on a separate corpus
    so the classification stage does real work.
    """
    if n_sessions < 1:
        raise ValueError("bench needs at least one session")
    signatures = signatures or default_signature_set()
    config = config.with_overrides(shards=1, threaded=False)
    if registry is None or not registry.models:
        registry = quick_registry(signatures, config, sessions_per_app=4, seed=seed + 1, profiles=profiles)

    apps = signatures.metaverses
    per_app = math.ceil(n_sessions / len(apps))
    # every session opens within the first interval so they all overlap
    frames, sidecars = synth_sessions(signatures, per_app, seed, apps, profiles, n_states=3,
                                      max_duration=duration, stagger=config.interval_len / (per_app * len(apps)))
    started = time.perf_counter()
    engine = replay_frames(frames, config, signatures, registry)
    elapsed = time.perf_counter() - started

    metrics = engine.snapshot_metrics()
    stages = metrics.timer.summary()
    per_session_ms = sum(stages[stage]["mean_ms"] for stage in STAGES)
    result = {
        "sessions": len(sidecars),
        "sessions_detected": len(engine.results()),
        "frames": len(frames),
        "elapsed_s": elapsed,
        "interval_len": config.interval_len,
        "stages": stages,
        "ms_per_session_cycle": per_session_ms,
        "sessions_per_core": (config.interval_len * 1000.0 / per_session_ms) if per_session_ms else float("inf"),
        "metrics": metrics.to_dict(),
    }
    logger.info(f"Bench: {len(sidecars)} sessions, {per_session_ms:.3f} ms per session per cycle, "
                f"~{result['sessions_per_core']:.0f} sessions per core")
    return result
