import json

import pytest

from vrsense.pipeline.engine import read_reports
from vrsense.session.states import StateLabel, allowed_states
from vrsense.synth.script import load_sidecars

MULTIVERSE_SCRIPT = {"app": "Multiverse", "states": [["HS", 40], ["MH", 30]], "seed": 7, "rtt_ms": 15}


@pytest.fixture
def synth_capture(runner, tmp_path):
    """A synthesized one-session pcap and its sidecar, written through the CLI."""
    script = tmp_path / "script.json"
    script.write_text(json.dumps(MULTIVERSE_SCRIPT))
    pcap, truth = tmp_path / "session.pcap", tmp_path / "truth.json"
    result = runner.invoke(args=["synth", "--script", str(script), "--out", str(pcap),
                                 "--sidecar", str(truth), "--background", "50"])
    assert result.exit_code == 0, result.output
    return pcap, truth


def test_synth_writes_capture_and_sidecar(synth_capture):
    pcap, truth = synth_capture
    assert pcap.stat().st_size > 0
    sidecar, = load_sidecars(truth)
    assert (sidecar.user, sidecar.app) == ("10.0.0.2", "Multiverse")
    assert [iv.state for iv in sidecar.intervals] == [StateLabel.HS] * 4 + [StateLabel.MH] * 3


def test_analyze_then_evaluate(runner, tmp_path, synth_capture):
    pcap, truth = synth_capture
    reports, flows = tmp_path / "reports.jsonl", tmp_path / "flows.jsonl"
    result = runner.invoke(args=["analyze", "--in", str(pcap), "--out", str(reports), "--flows-out", str(flows)])
    assert result.exit_code == 0, result.output
    assert result.output.splitlines()[-1].startswith("1 sessions,")

    report, = read_reports(reports)
    assert report.app == "Multiverse"
    assert len(report.timeline) == 7

    out = tmp_path / "evaluation.json"
    result = runner.invoke(args=["evaluate", "--reports", str(reports), "--truth", str(truth),
                                 "--flows", str(flows), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "Session TP|FP: 100.0%|0 (1/1 detected, 0 false)" in result.output
    assert "Flow detection by duration:" in result.output
    assert json.loads(out.read_text())["sessions"]["detected"] == 1


def test_analyze_is_deterministic(runner, tmp_path, synth_capture):
    pcap, _ = synth_capture
    outputs = []
    for name in ("a.jsonl", "b.jsonl"):
        result = runner.invoke(args=["analyze", "--in", str(pcap), "--out", str(tmp_path / name)])
        assert result.exit_code == 0, result.output
        outputs.append((tmp_path / name).read_bytes())
    assert outputs[0] == outputs[1]


def test_train_classifier_and_analyze_with_models(runner, tmp_path, synth_capture):
    pcap, truth = synth_capture
    attrs, model_dir = tmp_path / "attrs.csv", tmp_path / "models"
    result = runner.invoke(args=["analyze", "--in", str(pcap), "--out", str(tmp_path / "r0.jsonl"),
                                 "--attrs-out", str(attrs), "--truth", str(truth)])
    assert result.exit_code == 0, result.output

    result = runner.invoke(args=["train-classifier", "--app", "Multiverse", "--in", str(attrs),
                                 "--model-dir", str(model_dir), "--n-trees", "10", "--past-states", "2"])
    assert result.exit_code == 0, result.output
    assert (model_dir / "multiverse.stateless.json").exists()
    assert (model_dir / "multiverse.stateful.json").exists()

    reports = tmp_path / "r1.jsonl"
    result = runner.invoke(args=["analyze", "--in", str(pcap), "--out", str(reports), "--model-dir", str(model_dir)])
    assert result.exit_code == 0, result.output
    report, = read_reports(reports)
    assert {entry.state for entry in report.timeline} <= set(allowed_states("Multiverse"))


def test_export_and_reuse_default_model(runner, tmp_path, synth_capture):
    pcap, _ = synth_capture
    model = tmp_path / "signatures.json"
    assert runner.invoke(args=["export-default-model", "--out", str(model)]).exit_code == 0
    assert json.loads(model.read_text())["version"] == 1

    result = runner.invoke(args=["analyze", "--in", str(pcap), "--out", str(tmp_path / "r.jsonl"),
                                 "--model", str(model)])
    assert result.exit_code == 0, result.output
    assert result.output.splitlines()[-1].startswith("1 sessions,")


def test_report_latency_and_timelines(runner, tmp_path, synth_capture):
    pcap, _ = synth_capture
    reports = tmp_path / "reports.jsonl"
    assert runner.invoke(args=["analyze", "--in", str(pcap), "--out", str(reports)]).exit_code == 0
    as_map = tmp_path / "as.csv"
    as_map.write_text("cidr,as_label\n0.0.0.0/0,AS-ANY\n")

    plots, table = tmp_path / "plots", tmp_path / "latency.csv"
    result = runner.invoke(args=["report", "--reports", str(reports), "--latency-by-as", str(as_map),
                                 "--timeline", str(reports), "--plot-dir", str(plots), "--out", str(table)])
    assert result.exit_code == 0, result.output
    assert "AS-ANY" in result.output
    assert "Wrote 1 timeline plots" in result.output
    assert len(list(plots.glob("timeline_*.png"))) == 1
    assert table.exists()


def test_config_errors_exit_2(runner, tmp_path, synth_capture):
    pcap, _ = synth_capture
    result = runner.invoke(args=["analyze", "--in", str(pcap), "--out", str(tmp_path / "r.jsonl"),
                                 "--interval-len", "0"])
    assert result.exit_code == 2
    assert "Configuration error" in result.output

    result = runner.invoke(args=["synth", "--out", str(tmp_path / "x.pcap"), "--sidecar", str(tmp_path / "x.json")])
    assert result.exit_code == 2

    assert runner.invoke(args=["report"]).exit_code == 2


def test_model_errors_exit_3(runner, tmp_path, synth_capture):
    pcap, _ = synth_capture
    model = tmp_path / "future.json"
    model.write_text(json.dumps({"version": 99, "primaries": [], "udp": []}))
    result = runner.invoke(args=["analyze", "--in", str(pcap), "--out", str(tmp_path / "r.jsonl"),
                                 "--model", str(model)])
    assert result.exit_code == 3
    assert "SCHEMA_MISMATCH" in result.output


def test_other_engine_errors_exit_1(runner, tmp_path, synth_capture):
    pcap, _ = synth_capture
    reports = tmp_path / "reports.jsonl"
    assert runner.invoke(args=["analyze", "--in", str(pcap), "--out", str(reports)]).exit_code == 0
    garbage = tmp_path / "truth.json"
    garbage.write_text("{not json")
    result = runner.invoke(args=["evaluate", "--reports", str(reports), "--truth", str(garbage)])
    assert result.exit_code == 1
    assert "SIDE_CAR_MISMATCH" in result.output


def test_train_signatures_from_labelled_capture(runner, tmp_path):
    script = tmp_path / "script.json"
    script.write_text(json.dumps(MULTIVERSE_SCRIPT))
    pcap = tmp_path / "labelled.pcap"
    result = runner.invoke(args=["synth", "--script", str(script), "--out", str(pcap),
                                 "--sidecar", str(tmp_path / "truth.json")])
    assert result.exit_code == 0, result.output

    model = tmp_path / "multiverse.json"
    result = runner.invoke(args=["train-signatures", "--app", "Multiverse", "--domain", "shapevrcloud",
                                 "--in", str(pcap), "--out", str(model)])
    assert result.exit_code == 0, result.output
    assert "prefixes ['prod', 'prodblobs']" in result.output
    assert json.loads(model.read_text())["version"] == 1

    result = runner.invoke(args=["analyze", "--in", str(pcap), "--out", str(tmp_path / "r.jsonl"),
                                 "--model", str(model)])
    assert result.exit_code == 0, result.output
    assert result.output.splitlines()[-1].startswith("1 sessions,")
