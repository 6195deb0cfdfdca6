# vrsense/pipeline/commands.py

"""
Command-line entry points, registered on the app as ``flask --app app <command>``.

Exit codes: 0 success, 2 configuration error, 3 model error, 1 anything
else the engine reports.
"""

import functools
import json
import logging
import sys
import threading
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import click
from flask import Blueprint, current_app

from vrsense.capture.records import LinkType
from vrsense.classifier.forest import FeatureSpec, Hyperparams, load_forest, save_forest
from vrsense.classifier.stateful import (
    TUNE_N_VALUES, TUNE_T_VALUES, ModelRegistry, build_stateless_dataset, model_paths, score_closed_loop,
    train_app_models, tune_stateful,
)
from vrsense.classifier.sweep import DEFAULT_K_FOLDS, sweep_hyperparams
from vrsense.errors import ClassifierError, ConfigError, ModelFileError, SignatureTrainingError, VrsenseError
from vrsense.extensions import scheduler
from vrsense.pipeline.bench import bench
from vrsense.pipeline.config import EngineConfig
from vrsense.pipeline.corpus import synth_sessions
from vrsense.pipeline.engine import Engine, ReportSink, read_reports, write_reports
from vrsense.pipeline.evaluation import evaluate
from vrsense.pipeline.latency import ASMap, report_latency_by_as, with_fractions
from vrsense.pipeline.metrics import STAGES
from vrsense.pipeline.replay import PacedReplaySource, schedule_ticks, unschedule_ticks
from vrsense.pipeline.routes import ENGINE_KEY
from vrsense.plots.plot_timeline import plot_timelines
from vrsense.session.export import attribute_frame, export_attributes, load_attributes
from vrsense.session.states import allowed_states
from vrsense.signatures.model import SignatureSet, default_signature_set, load_model, save_model
from vrsense.signatures.training import (
    LabeledCapture, build_signature_set, corpus_timestamp, train_primary_signatures, train_udp_signatures,
)
from vrsense.synth.background import generate_background
from vrsense.synth.generator import generate_session
from vrsense.synth.packets import emit_pcap, merge_streams
from vrsense.synth.profiles import load_profiles
from vrsense.synth.script import DEFAULT_START, load_scripts, load_sidecars, save_sidecars, sidecar_labels
from vrsense.utils.helpers import format_tp_fp, read_jsonl, write_jsonl

cli_bp = Blueprint("vrsense_cli", __name__, cli_group=None)
logger = logging.getLogger(__name__)

EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MODEL = 3

existing_file = click.Path(exists=True, dir_okay=False)


def cli_errors(func: Callable) -> Callable:
    """Map engine errors to exit codes."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigError as e:
            click.echo(f"Configuration error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except (ModelFileError, ClassifierError) as e:
            click.echo(f"Model error [{e.code}]: {e}", err=True)
            sys.exit(EXIT_MODEL)
        except VrsenseError as e:
            click.echo(f"Error [{e.code}]: {e}", err=True)
            sys.exit(EXIT_ERROR)
    return wrapper


def engine_options(func: Callable) -> Callable:
    options = [
        click.option("--model", "signatures_path", type=existing_file,
                     help="Signature model JSON (default: the built-in model)"),
        click.option("--model-dir", "model_dir", type=click.Path(file_okay=False),
                     help="Directory of <app>.stateless.json / <app>.stateful.json classifiers"),
        click.option("--local-prefix", "local_prefixes", multiple=True, help="Local CIDR block (repeatable)"),
        click.option("--interval-len", type=float),
        click.option("--past-states", type=int, help="N, the number of past states"),
        click.option("--threshold", type=str, help="T, a number or 'main' / 'appendix'"),
        click.option("--shards", type=int),
        click.option("--threaded", is_flag=True, help="One thread per shard"),
        click.option("--no-udp-stage", is_flag=True, help="Skip time-critical UDP detection"),
        click.option("--as-map", "as_map_path", type=existing_file, help="CSV cidr,as_label"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _engine_config(local_prefixes: Sequence[str] = (), no_udp_stage: bool = False, threaded: bool = False,
                   **overrides) -> EngineConfig:
    overrides["local_prefixes"] = tuple(local_prefixes) or None
    overrides["threaded"] = threaded or None
    if no_udp_stage:
        overrides["enable_udp_stage"] = False
    return EngineConfig.from_mapping(current_app.config, **overrides)


def _signatures(config: EngineConfig) -> SignatureSet:
    return load_model(config.signatures_path) if config.signatures_path else default_signature_set()


def _registry(config: EngineConfig, signatures: SignatureSet, stateless_paths: Sequence[str] = (),
              stateful_paths: Sequence[str] = ()) -> ModelRegistry:
    registry = ModelRegistry.from_directory(config.model_dir, signatures.metaverses, config.threshold)
    for path in stateless_paths:
        model = load_forest(path)
        if model.app is None or model.feature_spec is FeatureSpec.STATEFUL_40_PLUS_NK:
            raise ConfigError(f"{path} is not a stateless model of a named app")
        registry.register(model.app, model, registry.models.get(model.app, (None, None))[1])
    for path in stateful_paths:
        model = load_forest(path)
        if model.feature_spec is not FeatureSpec.STATEFUL_40_PLUS_NK:
            raise ConfigError(f"{path} is not a stateful model")
        if model.app not in registry.models:
            raise ConfigError(f"Stateful model {path} for {model.app} needs a stateless model too (--stateless)")
        registry.register(model.app, registry.models[model.app][0], model)
    return registry


def _app_rows(paths: Sequence[str], app_name: str):
    try:
        frame = load_attributes(list(paths))
    except ValueError as e:
        raise ClassifierError(str(e), code="FEATURE_DIM_MISMATCH")
    if "app" in frame.columns and frame["app"].notna().any():
        frame = frame[frame["app"] == app_name]
    return frame


def _parse_list(value: Optional[str], cast, default: List) -> List:
    if not value:
        return list(default)
    try:
        return [cast(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"Bad list {value!r}: {e}")


def _hyperparams(n_trees: int, max_depth: int, max_features: int) -> Hyperparams:
    hp = Hyperparams(n_trees=n_trees, max_depth=max_depth, max_features=max_features)
    hp.validate()
    return hp


def _json_default(value):
    return value.item() if hasattr(value, "item") else str(value)


hyperparam_options = [
    click.option("--n-trees", type=int, default=Hyperparams.n_trees),
    click.option("--max-depth", type=int, default=Hyperparams.max_depth),
    click.option("--max-features", type=int, default=Hyperparams.max_features),
]


def with_hyperparams(func: Callable) -> Callable:
    for option in reversed(hyperparam_options):
        func = option(func)
    return func


########################################################
# SIGNATURES
########################################################

@cli_bp.cli.command("train-signatures")
@click.option("--app", "app_name", required=True, help="Metaverse name")
@click.option("--domain", required=True, help="Primary domain suffix, e.g. shapevrcloud.com")
@click.option("--in", "in_paths", required=True, multiple=True, type=existing_file)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--merge", "merge_path", type=existing_file, help="Existing model to add this app to")
@click.option("--udp-length", type=int, help="UDP signature length (default: learned per port)")
@click.option("--local-prefix", "local_prefixes", multiple=True)
@cli_errors
def train_signatures(app_name, domain, in_paths, out_path, merge_path, udp_length, local_prefixes):
    config = _engine_config(local_prefixes)
    captures = [LabeledCapture(app_name, path=p, local_prefixes=config.local_prefixes) for p in in_paths]
    primary = train_primary_signatures(captures, domain, k_max=config.k_max)
    udp = train_udp_signatures(captures, config.udp_ports, udp_length)
    sigset = build_signature_set([primary], udp, created_at=corpus_timestamp(captures))
    if merge_path:
        sigset = load_model(merge_path).merged_with(sigset)
        try:
            sigset.validate()
        except ValueError as e:
            raise SignatureTrainingError(f"Merged model is inconsistent: {e}", code="AMBIGUOUS_SIGNATURE")
    save_model(sigset, out_path)
    click.echo(f"{app_name}: {len(primary.signatures)} primary signatures, prefixes {primary.prefix_order}, "
               f"{len(udp)} UDP signatures -> {out_path}")
    for category, count in sorted(primary.categories.items()):
        click.echo(f"  {category}: {count} flows")


@cli_bp.cli.command("export-default-model")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@cli_errors
def export_default_model(out_path):
    save_model(default_signature_set(), out_path)
    click.echo(f"Wrote the built-in signature model to {out_path}")


########################################################
# CLASSIFIER
########################################################

@cli_bp.cli.command("train-classifier")
@click.option("--app", "app_name", required=True)
@click.option("--mode", type=click.Choice(["stateless", "stateful", "hostlevel"]), default="stateful")
@click.option("--in", "in_paths", required=True, multiple=True, type=existing_file,
              help="Attribute CSV (repeat to merge old and newly labelled data)")
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
@click.option("--model-dir", type=click.Path(file_okay=False))
@click.option("--sweep", is_flag=True, help="Pick hyperparameters by k-fold cross-validation first")
@click.option("--k-folds", type=int, default=DEFAULT_K_FOLDS)
@click.option("--holdout", "holdout_path", type=existing_file, help="Held-out CSV to score the new models on")
@click.option("--past-states", type=int)
@click.option("--threshold", type=str)
@click.option("--seed", type=int, default=0)
@with_hyperparams
@cli_errors
def train_classifier(app_name, mode, in_paths, out_path, model_dir, sweep, k_folds, holdout_path, past_states,
                     threshold, seed, n_trees, max_depth, max_features):
    config = _engine_config(past_states=past_states, threshold=threshold, model_dir=model_dir)
    frame = _app_rows(in_paths, app_name)
    hp = _hyperparams(n_trees, max_depth, max_features)

    if sweep:
        spec = FeatureSpec.HOST_LEVEL_16 if mode == "hostlevel" else FeatureSpec.STATELESS_40
        label_space = allowed_states(app_name)
        X, labels = build_stateless_dataset(frame, spec, label_space)
        result = sweep_hyperparams(X, labels, k_folds=k_folds, seed=seed, label_space=label_space,
                                   feature_spec=spec)
        click.echo(result.to_frame().to_string(index=False))
        hp = result.best
        click.echo(f"Best: {hp.to_dict()}")

    stateless, stateful = train_app_models(frame, app_name, hp, seed, mode, config.past_states)
    target_dir = Path(out_path).parent if out_path else config.model_dir
    if target_dir is None:
        raise ConfigError("Give --out or --model-dir")
    stateless_path, stateful_path = model_paths(target_dir, app_name)
    if stateful is not None:
        save_forest(stateful, out_path or stateful_path)
        save_forest(stateless, stateless_path)
        click.echo(f"Saved {app_name} stateful model to {out_path or stateful_path} "
                   f"and stateless model to {stateless_path}")
    else:
        save_forest(stateless, out_path or stateless_path)
        click.echo(f"Saved {app_name} {mode} model to {out_path or stateless_path}")

    if holdout_path:
        holdout = _app_rows([holdout_path], app_name)
        rates, fallback_share = score_closed_loop(holdout, stateless, stateful, config.threshold)
        for label, (tp, fp) in rates.items():
            click.echo(f"  {label.value:<4} {format_tp_fp(tp, fp)}")
        click.echo(f"  fallback share {fallback_share:.3f}")


@cli_bp.cli.command("tune-stateful")
@click.option("--app", "app_name", required=True)
@click.option("--in", "in_paths", required=True, multiple=True, type=existing_file)
@click.option("--n-values", help="Comma list of N (default 1..10)")
@click.option("--t-values", help="Comma list of T (default 0.30..0.95)")
@click.option("--k-folds", type=int, default=DEFAULT_K_FOLDS)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Write the table as CSV")
@with_hyperparams
@cli_errors
def tune_stateful_cmd(app_name, in_paths, n_values, t_values, k_folds, seed, out_path,
                      n_trees, max_depth, max_features):
    frame = _app_rows(in_paths, app_name)
    table = tune_stateful(frame, app_name, _hyperparams(n_trees, max_depth, max_features),
                          _parse_list(n_values, int, TUNE_N_VALUES), _parse_list(t_values, float, TUNE_T_VALUES),
                          k_folds, seed)
    click.echo(table.to_string(index=False))
    if out_path:
        table.to_csv(out_path, index=False)


########################################################
# SYNTHETIC TRACES
########################################################

@cli_bp.cli.command("synth")
@click.option("--app", "app_name", help="App for scripts that do not name one / for random sessions")
@click.option("--script", "script_path", type=existing_file)
@click.option("--random-sessions", type=int, default=0, help="Random sessions per app instead of a script")
@click.option("--model", "signatures_path", type=existing_file)
@click.option("--profiles", "profiles_path", type=existing_file)
@click.option("--seed", type=int, help="Overrides the script seeds (session i gets seed + i)")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--sidecar", "sidecar_path", required=True, type=click.Path(dir_okay=False))
@click.option("--background", "background_flows", type=int, default=0, help="Non-metaverse flows to mix in")
@click.option("--near-miss", type=float, default=0.1, help="Share of background TLS flows near a signature")
@click.option("--allow-collisions", is_flag=True, help="Do not redraw background flows that match a signature")
@click.option("--plant", "planted", type=int, default=0, help="Background flows duplicating primary signatures")
@click.option("--link-type", type=click.Choice(["ethernet", "raw"]), default="ethernet")
@cli_errors
def synth(app_name, script_path, random_sessions, signatures_path, profiles_path, seed, out_path, sidecar_path,
          background_flows, near_miss, allow_collisions, planted, link_type):
    signatures = load_model(signatures_path) if signatures_path else default_signature_set()
    profiles = load_profiles(profiles_path)
    if script_path:
        streams, sidecars = [], []
        for i, script in enumerate(load_scripts(script_path, {"app": app_name})):
            if seed is not None:
                script.seed = seed + i
            frames, sidecar = generate_session(script, signatures, profiles)
            streams.append(frames)
            sidecars.append(sidecar)
        frames = merge_streams(*streams)
    elif random_sessions > 0:
        apps = [app_name] if app_name else None
        frames, sidecars = synth_sessions(signatures, random_sessions, seed or 0, apps, profiles)
    else:
        raise ConfigError("synth needs --script or --random-sessions")

    if background_flows or planted:
        start = min((s.start for s in sidecars), default=DEFAULT_START)
        end = max((s.end for s in sidecars), default=start)
        planted_seqs = [signatures.primaries[i % len(signatures.primaries)].size_seq for i in range(planted)]
        background = generate_background(background_flows, (seed or 0) + 1, signatures,
                                         exclude_collisions=not allow_collisions, near_miss_fraction=near_miss,
                                         planted=planted_seqs, start=start, span=max(end - start, 60.0))
        frames = merge_streams(frames, background)

    emit_pcap(frames, out_path, LinkType.ETHERNET if link_type == "ethernet" else LinkType.RAW_IP)
    save_sidecars(sidecars, sidecar_path)
    click.echo(f"Wrote {len(frames)} frames ({len(sidecars)} sessions) to {out_path}")


########################################################
# ENGINE
########################################################

@cli_bp.cli.command("analyze")
@click.option("--in", "in_path", required=True, type=existing_file)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--stateless", "stateless_paths", multiple=True, type=existing_file)
@click.option("--stateful", "stateful_paths", multiple=True, type=existing_file)
@click.option("--flows-out", type=click.Path(dir_okay=False), help="JSONL log of every candidate flow")
@click.option("--attrs-out", type=click.Path(dir_okay=False), help="CSV of interval attributes")
@click.option("--truth", "truth_paths", multiple=True, type=existing_file,
              help="Sidecars whose labels go into --attrs-out")
@engine_options
@cli_errors
def analyze(in_path, out_path, stateless_paths, stateful_paths, flows_out, attrs_out, truth_paths, **engine_kwargs):
    config = _engine_config(**engine_kwargs)
    signatures = _signatures(config)
    registry = _registry(config, signatures, stateless_paths, stateful_paths)
    engine = Engine(config, signatures, registry, keep_flow_log=bool(flows_out))
    reports = engine.run(in_path)
    write_reports(reports, out_path)
    if flows_out:
        write_jsonl(engine.flow_log(), flows_out)
    if attrs_out:
        truth = sidecar_labels(load_sidecars(truth_paths)) if truth_paths else None
        export_attributes(attribute_frame(reports, truth), attrs_out)
    metrics = engine.snapshot_metrics()
    click.echo(f"{len(reports)} sessions, {metrics.records} records, {metrics.flows_tracked} tracked flows, "
               f"{metrics.fallbacks} fallbacks, {metrics.drops + metrics.table_drops} drops -> {out_path}")


@cli_bp.cli.command("live")
@click.option("--iface", "source", required=True, help="Capture file replayed at its recorded pace")
@click.option("--speed", type=float, default=1.0)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Reports JSONL, appended as sessions close")
@click.option("--serve-port", type=int, help="Serve the /engine monitor endpoints on this port")
@engine_options
@cli_errors
def live(source, speed, out_path, serve_port, **engine_kwargs):
    if not Path(source).is_file():
        raise ConfigError(f"Live source {source} is not a capture file; only paced replay is supported")
    config = _engine_config(**engine_kwargs)
    signatures = _signatures(config)
    engine = Engine(config, signatures, _registry(config, signatures))
    out_path = out_path or config.report_path
    if out_path:
        engine.add_listener(ReportSink(out_path))

    try:
        replay = PacedReplaySource(source, config.local_prefixes, speed)
    except ValueError as e:
        raise ConfigError(str(e))
    if serve_port:
        app = current_app._get_current_object()
        app.extensions[ENGINE_KEY] = engine
        threading.Thread(target=app.run, kwargs={"port": serve_port, "use_reloader": False},
                         name="vrsense-monitor", daemon=True).start()
    schedule_ticks(scheduler, engine, replay, config.tick_seconds)
    try:
        reports = engine.run(replay.as_source())
    finally:
        unschedule_ticks(scheduler)
    click.echo(f"Live replay finished: {len(reports)} sessions")


@cli_bp.cli.command("evaluate")
@click.option("--reports", "reports_path", required=True, type=existing_file)
@click.option("--truth", "truth_paths", required=True, multiple=True, type=existing_file)
@click.option("--flows", "flows_path", type=existing_file, help="Flow log from analyze --flows-out")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Write the full result as JSON")
@cli_errors
def evaluate_cmd(reports_path, truth_paths, flows_path, out_path):
    result = evaluate(read_reports(reports_path), load_sidecars(truth_paths),
                      read_jsonl(flows_path) if flows_path else None)
    click.echo(f"Session TP|FP: {result.session_row()} ({result.detected_sessions}/{result.truth_sessions} "
               f"detected, {result.false_sessions} false)")
    if result.flows is not None:
        click.echo("Flow detection by duration:")
        click.echo(result.flows[["truth", "detected", "negatives", "false", "TP|FP"]].to_string())
    if result.per_class:
        click.echo("Per-class TP|FP:")
        click.echo(result.per_class_table().to_string())
        click.echo("Confusion matrix (rows: truth, columns: reported):")
        click.echo(result.confusion.to_string())
    if out_path:
        Path(out_path).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True, default=_json_default))


@cli_bp.cli.command("bench")
@click.option("--sessions", "n_sessions", type=int, default=250)
@click.option("--duration", type=float, default=120.0, help="Seconds per synthetic session")
@click.option("--seed", type=int, default=0)
@engine_options
@cli_errors
def bench_cmd(n_sessions, duration, seed, **engine_kwargs):
    config = _engine_config(**engine_kwargs)
    signatures = _signatures(config)
    result = bench(config, n_sessions, seed, duration, signatures, _registry(config, signatures))
    click.echo(f"{result['sessions']} sessions, {result['frames']} frames in {result['elapsed_s']:.1f}s")
    for stage in STAGES:
        timing = result["stages"][stage]
        click.echo(f"  {stage:<18} {timing['mean_ms']:.4f} ms ± {timing['std_ms']:.4f} ms per session "
                   f"per {config.interval_len:g}s cycle ({timing['cycles']} cycles)")
    click.echo(f"  ~{result['sessions_per_core']:.0f} sessions per core")


@cli_bp.cli.command("report")
@click.option("--reports", "reports_path", type=existing_file)
@click.option("--latency-by-as", "as_map_path", type=existing_file, help="CSV cidr,as_label")
@click.option("--timeline", "timeline_path", type=existing_file, help="Reports to plot as state timelines")
@click.option("--plot-dir", type=click.Path(file_okay=False), default="plots")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Latency table as CSV")
@cli_errors
def report_cmd(reports_path, as_map_path, timeline_path, plot_dir, out_path):
    if not (reports_path or timeline_path):
        raise ConfigError("report needs --reports or --timeline")
    if as_map_path and not reports_path:
        raise ConfigError("--latency-by-as needs --reports")
    if reports_path:
        table = report_latency_by_as(read_reports(reports_path), ASMap.load(as_map_path) if as_map_path else None)
        click.echo(with_fractions(table).to_string())
        if out_path:
            table.to_csv(out_path)
    if timeline_path:
        paths = plot_timelines(read_reports(timeline_path), plot_dir)
        click.echo(f"Wrote {len(paths)} timeline plots to {plot_dir}")
