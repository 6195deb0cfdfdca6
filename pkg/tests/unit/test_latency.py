import pytest

from vrsense.errors import EvaluationError
from vrsense.pipeline.latency import UNKNOWN_AS, ASMap, latency_bucket, report_latency_by_as, with_fractions


def _report(*flows):
    return {"user": "10.0.0.2", "app": "VRChat", "flows": [
        {"key": {"dst_ip": ip}, "rtt_ms": rtt, "as_label": label} for ip, rtt, label in flows
    ]}


def test_bucket_edges():
    assert latency_bucket(12.0) == "10-20ms"
    assert latency_bucket(0.0) == "<10ms"
    assert latency_bucket(9.999) == "<10ms"
    assert latency_bucket(10.0) == "10-20ms"
    assert latency_bucket(50.0) == ">50ms"
    with pytest.raises(ValueError):
        latency_bucket(-1.0)


def test_longest_prefix_wins():
    as_map = ASMap([("52.0.0.0/8", "AS-WIDE"), ("52.10.0.0/16", "AS-NARROW"), ("2001:db8::/32", "AS-V6")])
    assert as_map.label("52.10.3.4") == "AS-NARROW"
    assert as_map.label("52.11.3.4") == "AS-WIDE"
    assert as_map.label("8.8.8.8") == UNKNOWN_AS
    assert as_map.label("2001:db8::1") == "AS-V6"
    assert as_map.label("not-an-ip") == UNKNOWN_AS
    with pytest.raises(EvaluationError):
        ASMap([("52.0.0.0/33", "BAD")])


def test_as_map_file(tmp_path):
    path = tmp_path / "as.csv"
    path.write_text("# prefix list\ncidr,as_label\n52.0.0.0/8,AS16509\n18.0.0.0/8,AS14618\n")
    as_map = ASMap.load(path)
    assert len(as_map) == 2
    assert as_map.label("18.1.1.1") == "AS14618"

    wrong = tmp_path / "wrong.csv"
    wrong.write_text("prefix,name\n52.0.0.0/8,X\n")
    with pytest.raises(EvaluationError) as e:
        ASMap.load(wrong)
    assert e.value.code == "BAD_AS_MAP"


def test_latency_table_by_as():
    as_map = ASMap([("52.0.0.0/8", "AS-A"), ("18.0.0.0/8", "AS-B")])
    reports = [
        _report(("52.1.1.1", 5.0, None), ("52.1.1.2", 15.0, None), ("52.1.1.3", 35.0, None)),
        _report(("52.1.1.4", 80.0, None), ("18.1.1.1", None, None), ("9.9.9.9", 12.0, None)),
    ]
    table = report_latency_by_as(reports, as_map)

    assert list(table.index) == ["AS-A", "AS-B", UNKNOWN_AS]
    row = table.loc["AS-A"]
    assert [row["<10ms"], row["10-20ms"], row["20-50ms"], row[">50ms"]] == [1, 1, 1, 1]
    assert row["total"] == 4
    assert table.loc["AS-B", "unmeasured"] == 1
    assert table.loc["AS-B", "total"] == 0
    assert table.loc[UNKNOWN_AS, "10-20ms"] == 1

    rendered = with_fractions(table)
    assert rendered.loc["AS-A", "<10ms"] == "1 (25.0%)"
    assert rendered.loc["AS-B", "<10ms"] == "0 (0.0%)"


def test_labels_recorded_in_reports():
    table = report_latency_by_as([_report(("52.1.1.1", 5.0, "AS-X"), ("52.1.1.2", 5.0, None))])
    assert table.loc["AS-X", "<10ms"] == 1
    assert table.loc[UNKNOWN_AS, "<10ms"] == 1
