import json

import pytest

from vrsense.capture.pcap_reader import read_records
from vrsense.errors import EvaluationError, SynthError
from vrsense.session.states import DomainType, StateLabel, allowed_states
from vrsense.synth.background import generate_background
from vrsense.synth.generator import generate_session
from vrsense.synth.packets import emit_pcap
from vrsense.synth.profiles import Distribution, load_profiles
from vrsense.synth.script import (
    SessionScript, load_scripts, load_sidecars, random_script, save_sidecars, sidecar_labels, tile_intervals,
)

HS, MH, SUE = StateLabel.HS, StateLabel.MH, StateLabel.SUE


def test_generation_is_deterministic(signatures):
    script = SessionScript("VRChat", [(HS, 20.0), (SUE, 20.0)], seed=5)
    frames_a, truth_a = generate_session(script, signatures)
    frames_b, truth_b = generate_session(script, signatures)
    assert frames_a == frames_b
    assert truth_a.to_dict() == truth_b.to_dict()

    other, _ = generate_session(SessionScript("VRChat", [(HS, 20.0), (SUE, 20.0)], seed=6), signatures)
    assert other != frames_a


def test_frames_are_time_ordered(multiverse_session):
    frames, _ = multiverse_session
    stamps = [f.ts_us for f in frames]
    assert stamps == sorted(stamps)


def test_sidecar_describes_the_session(multiverse_session):
    frames, truth = multiverse_session
    assert truth.app == "Multiverse"
    assert truth.user == "10.0.0.2"
    assert truth.end - truth.start == pytest.approx(70.0)
    assert [iv.state for iv in truth.intervals] == [HS] * 4 + [MH] * 3
    assert truth.intervals[0].start == truth.start
    assert frames[0].timestamp < truth.start
    kinds = {flow.domain_type for flow in truth.flows}
    assert kinds == {DomainType.PRIMARY, DomainType.TIME_CRITICAL}
    assert all(flow.rtt_ms == 15.0 for flow in truth.flows if flow.domain_type is DomainType.PRIMARY)


def test_opening_handshakes_carry_the_signatures(tmp_path, signatures, multiverse_session):
    frames, truth = multiverse_session
    records = read_records(emit_pcap(frames, tmp_path / "s.pcap"), ("10.0.0.0/8",))
    hellos = [r for r in records if r.tls is not None and r.tls.sni and r.timestamp <= truth.start]
    assert [h.tls.sni for h in hellos] == ["prod.shapevrcloud.com", "prod.shapevrcloud.com",
                                           "prodblobs.shapevrcloud.com"]
    assert sorted(h.payload_len for h in hellos) == [414, 414, 419]


def test_inactive_udp_states_have_no_new_udp_flows(signatures):
    script = SessionScript("Rec Room", [(HS, 10.0), (StateLabel.CC, 40.0)], seed=2)
    _, truth = generate_session(script, signatures)
    cc_start = truth.start + 10.0
    udp_starts = [f.first_seen for f in truth.flows if f.domain_type is DomainType.TIME_CRITICAL]
    assert udp_starts
    assert all(start < cc_start for start in udp_starts)


def test_script_validation(signatures):
    with pytest.raises(SynthError) as e:
        SessionScript("VRChat", [(SUE, 10.0)]).validate()
    assert e.value.code == "BAD_SCRIPT"
    with pytest.raises(SynthError) as e:
        SessionScript("VRChat", [(HS, 10.0), (StateLabel.CC, 10.0)]).validate()
    assert e.value.code == "UNKNOWN_STATE_FOR_APP"
    with pytest.raises(SynthError) as e:
        SessionScript("VRChat", [(HS, -1.0)]).validate()
    assert e.value.code == "BAD_SCRIPT"
    with pytest.raises(SynthError):
        generate_session(SessionScript("Nowhere", [(HS, 10.0)]), signatures)


def test_tile_intervals_majority_and_ties():
    tiles = tile_intervals(100.0, [(HS, 15.0), (MH, 5.0)], 10.0)
    assert [t.state for t in tiles] == [HS, HS]

    tiles = tile_intervals(0.0, [(HS, 12.0), (MH, 13.0)], 10.0)
    assert [t.state for t in tiles] == [HS, MH, MH]
    assert tiles[-1].end == 25.0
    assert tile_intervals(0.0, [], 10.0) == []


def test_script_files(tmp_path):
    path = tmp_path / "scripts.json"
    path.write_text(json.dumps({
        "seed": 9, "rtt_ms": 20,
        "sessions": [
            {"app": "VRChat", "states": [["HS", 30], ["SUE", 60]], "user_ip": "10.0.0.4"},
            {"app": "Multiverse", "states": [["HS", 30]], "seed": 1},
        ],
    }))
    first, second = load_scripts(path)
    assert first.metaverse == "VRChat"
    assert first.states == [(HS, 30.0), (SUE, 60.0)]
    assert first.seed == 9
    assert first.rtt_ms == 20.0
    assert second.seed == 1
    assert load_scripts(path, {"seed": 4})[1].seed == 4

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"app": "VRChat", "states": [["NAP", 10]]}))
    with pytest.raises(SynthError):
        load_scripts(bad)


def test_random_script_respects_the_app():
    profiles = load_profiles()
    script = random_script("VRChat", seed=3, user_ip="10.0.0.7", profiles=profiles, n_states=5,
                           max_duration=200.0)
    script.validate()
    assert script.states[0][0] is HS
    assert {label for label, _ in script.states} <= set(allowed_states("VRChat"))
    assert script.duration <= 200.0


def test_sidecar_round_trip_and_labels(tmp_path, vrchat_session, multiverse_session):
    path = save_sidecars([vrchat_session[1], multiverse_session[1]], tmp_path / "truth.json")
    loaded = load_sidecars(path)
    assert [s.to_dict() for s in loaded] == [vrchat_session[1].to_dict(), multiverse_session[1].to_dict()]
    labels = sidecar_labels(loaded)
    assert labels[("10.0.0.9", "VRChat")] == {0: "HS", 1: "HS", 2: "HS", 3: "SUE", 4: "SUE", 5: "SUE"}


def test_unreadable_sidecar(tmp_path):
    path = tmp_path / "truth.json"
    path.write_text("[1, 2")
    with pytest.raises(EvaluationError):
        load_sidecars(path)


def test_background_is_deterministic_and_ordered(signatures):
    a = generate_background(60, seed=4, signatures=signatures)
    b = generate_background(60, seed=4, signatures=signatures)
    assert a == b
    assert [f.ts_us for f in a] == sorted(f.ts_us for f in a)
    with pytest.raises(ValueError):
        generate_background(-1, seed=0)


def test_distributions():
    assert Distribution.from_dict(3).sample(None) == 3.0
    assert Distribution("uniform", {"low": 2.0, "high": 4.0}).mean == 3.0
    with pytest.raises(SynthError):
        Distribution("zipf")
