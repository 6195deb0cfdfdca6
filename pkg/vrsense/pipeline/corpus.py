# vrsense/pipeline/corpus.py

"""
Synthetic corpora for benchmarking and training: many generated sessions
merged into one stream, replayed through the engine, and turned into
labelled attribute rows.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import pandas as pd

from vrsense.capture.records import CaptureSource
from vrsense.classifier.forest import Hyperparams
from vrsense.classifier.stateful import ModelRegistry, train_app_models
from vrsense.pipeline.config import EngineConfig
from vrsense.pipeline.engine import Engine
from vrsense.session.context import SessionReport
from vrsense.session.export import attribute_frame
from vrsense.signatures.model import SignatureSet
from vrsense.synth.generator import generate_session
from vrsense.synth.packets import Frame, frames_as_source, merge_streams
from vrsense.synth.profiles import ProfileSet, load_profiles
from vrsense.synth.script import DEFAULT_START, GroundTruthSidecar, random_script, sidecar_labels

logger = logging.getLogger(__name__)


def session_user_ip(app_index: int, session_index: int) -> str:
    return f"10.{app_index + 1}.{session_index // 250}.{session_index % 250 + 1}"


def synth_sessions(signatures: SignatureSet, sessions_per_app: int, seed: int = 0,
                   apps: Optional[Sequence[str]] = None, profiles: Optional[ProfileSet] = None,
                   n_states: int = 4, max_duration: Optional[float] = None, start: float = DEFAULT_START,
                   stagger: float = 7.0) -> Tuple[List[Frame], List[GroundTruthSidecar]]:
    """``sessions_per_app`` random sessions of every app, one user each, merged in time order."""
    profiles = profiles or load_profiles()
    apps = list(apps or signatures.metaverses)
    streams, sidecars = [], []
    for a, app in enumerate(apps):
        for i in range(sessions_per_app):
            n = a * sessions_per_app + i
            script = random_script(app, seed * 100_003 + n, session_user_ip(a, i), profiles, n_states,
                                   start + n * stagger, max_duration)
            frames, sidecar = generate_session(script, signatures, profiles)
            streams.append(frames)
            sidecars.append(sidecar)
    frames = merge_streams(*streams)
    logger.info(f"Synthesized {len(sidecars)} sessions ({len(frames)} frames) for {apps}")
    return frames, sidecars


def replay_frames(frames: Sequence[Frame], config: EngineConfig, signatures: Optional[SignatureSet] = None,
                  registry: Optional[ModelRegistry] = None, keep_flow_log: bool = False) -> Engine:
    """Run generated frames through a fresh engine and return it (reports, metrics and flow log inside)."""
    engine = Engine(config, signatures, registry if registry is not None else ModelRegistry(config.threshold),
                    keep_flow_log=keep_flow_log)
    engine.run(CaptureSource.from_frames(frames_as_source(frames), config.local_prefixes))
    return engine


def labelled_attributes(reports: Sequence[SessionReport], sidecars: Sequence[GroundTruthSidecar]) -> pd.DataFrame:
    return attribute_frame(reports, truth=sidecar_labels(sidecars))


def synth_training_frame(signatures: SignatureSet, config: EngineConfig, sessions_per_app: int = 8,
                         seed: int = 0, apps: Optional[Sequence[str]] = None,
                         profiles: Optional[ProfileSet] = None, n_states: int = 5) -> pd.DataFrame:
    frames, sidecars = synth_sessions(signatures, sessions_per_app, seed, apps, profiles, n_states)
    engine = replay_frames(frames, config, signatures)
    return labelled_attributes(engine.results(), sidecars)


def quick_registry(signatures: SignatureSet, config: EngineConfig, sessions_per_app: int = 6, seed: int = 0,
                   hyperparams: Optional[Hyperparams] = None, profiles: Optional[ProfileSet] = None,
                   apps: Optional[Sequence[str]] = None) -> ModelRegistry:
    """Stateless and stateful models per app trained on a fresh synthetic corpus."""
    hyperparams = hyperparams or Hyperparams()
    frame = synth_training_frame(signatures, config, sessions_per_app, seed, apps, profiles)
    registry = ModelRegistry(config.threshold)
    for app, rows in frame.groupby("app"):
        registry.register(app, *train_app_models(rows, app, hyperparams, seed, mode="stateful",
                                                 n_past=config.past_states))
    logger.info(f"Trained quick models for {sorted(registry.models)} on {len(frame)} intervals")
    return registry
