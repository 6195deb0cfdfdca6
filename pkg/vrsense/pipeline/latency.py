# vrsense/pipeline/latency.py

"""
User-perceived latency per autonomous system: the handshake RTT of every
tracked flow in the session reports, bucketed per AS of the server address.
"""

import ipaddress
import logging
from typing import Iterable, List, Optional, Tuple

import pandas as pd

from vrsense.errors import EvaluationError
from vrsense.session.context import SessionReport

logger = logging.getLogger(__name__)

UNKNOWN_AS = "UNKNOWN_AS"
UNMEASURED = "unmeasured"
# (label, lower bound inclusive, upper bound exclusive) in ms
LATENCY_BUCKETS: Tuple[Tuple[str, float, float], ...] = (
    ("<10ms", 0.0, 10.0),
    ("10-20ms", 10.0, 20.0),
    ("20-50ms", 20.0, 50.0),
    (">50ms", 50.0, float("inf")),
)
BUCKET_COLUMNS = [name for name, _, _ in LATENCY_BUCKETS]


def latency_bucket(rtt_ms: float) -> str:
    for name, lo, hi in LATENCY_BUCKETS:
        if lo <= rtt_ms < hi:
            return name
    raise ValueError(f"negative RTT {rtt_ms}")


class ASMap:
    """CIDR -> AS label with longest-prefix matching."""

    def __init__(self, entries: Iterable[Tuple[str, str]] = ()):
        networks = []
        for cidr, label in entries:
            try:
                networks.append((ipaddress.ip_network(str(cidr).strip(), strict=False), str(label).strip()))
            except ValueError as e:
                raise EvaluationError(f"Bad CIDR {cidr!r} in AS map: {e}", code="BAD_AS_MAP")
        self.networks = sorted(networks, key=lambda item: item[0].prefixlen, reverse=True)

    def __len__(self):
        return len(self.networks)

    @classmethod
    def load(cls, path) -> "ASMap":
        try:
            frame = pd.read_csv(path, dtype=str, comment="#")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise EvaluationError(f"Cannot read AS map {path}: {e}", code="BAD_AS_MAP")
        frame.columns = [c.strip() for c in frame.columns]
        if not {"cidr", "as_label"} <= set(frame.columns):
            raise EvaluationError(f"AS map {path} needs a 'cidr,as_label' header", code="BAD_AS_MAP")
        frame = frame.dropna(subset=["cidr", "as_label"])
        as_map = cls(zip(frame["cidr"], frame["as_label"]))
        logger.info(f"Loaded {len(as_map)} AS prefixes from {path}")
        return as_map

    def label(self, ip: str) -> str:
        try:
            addr = ipaddress.ip_address(ip)
        except ValueError:
            return UNKNOWN_AS
        for network, label in self.networks:
            if addr.version == network.version and addr in network:
                return label
        return UNKNOWN_AS


def _flows(reports: Iterable) -> List[dict]:
    flows = []
    for report in reports:
        flows.extend(report.flows if isinstance(report, SessionReport) else report.get("flows", []))
    return flows


def report_latency_by_as(reports: Iterable, as_map: Optional[ASMap] = None) -> pd.DataFrame:
    """
    One row per AS with flow counts per latency bucket, an ``unmeasured``
    column for flows without an RTT estimate, and the row total.

    Without an AS map the label recorded in the report is used.
    """
    counts = {}
    for flow in _flows(reports):
        if as_map is not None:
            label = as_map.label(flow["key"]["dst_ip"])
        else:
            label = flow.get("as_label") or UNKNOWN_AS
        row = counts.setdefault(label, dict.fromkeys(BUCKET_COLUMNS + [UNMEASURED], 0))
        rtt = flow.get("rtt_ms")
        row[UNMEASURED if rtt is None else latency_bucket(float(rtt))] += 1

    table = pd.DataFrame.from_dict(counts, orient="index", columns=BUCKET_COLUMNS + [UNMEASURED])
    table = table.fillna(0).astype(int).sort_index()
    table.index.name = "as_label"
    table["total"] = table[BUCKET_COLUMNS].sum(axis=1)
    return table


def with_fractions(table: pd.DataFrame) -> pd.DataFrame:
    """Render bucket cells as 'count (share%)' of the row's measured flows."""
    rendered = table.copy().astype(object)
    for label, row in table.iterrows():
        total = row["total"]
        for column in BUCKET_COLUMNS:
            share = row[column] / total * 100 if total else 0.0
            rendered.at[label, column] = f"{row[column]} ({share:.1f}%)"
    return rendered
