# vrsense/plots/plot_timeline.py

import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.dates as mdates  # noqa: E402
import matplotlib.patches as mpatches  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402

from vrsense.session.context import SessionReport  # noqa: E402
from vrsense.session.export import session_id  # noqa: E402
from vrsense.session.states import StateLabel  # noqa: E402

logger = logging.getLogger(__name__)

########################################################
# STATE MAPPING
########################################################

state_colors = {
    StateLabel.HS: "tab:blue",
    StateLabel.MH: "tab:green",
    StateLabel.SUE: "tab:orange",
    StateLabel.SPE: "tab:red",
    StateLabel.AT: "tab:purple",
    StateLabel.CC: "tab:brown",
    StateLabel.UNKNOWN: "lightgrey",
}
state_heights = {label: i + 1 for i, label in enumerate(state_colors)}

########################################################
# HELPERS
########################################################


def to_datetime(ts: float) -> datetime:
    return datetime.fromtimestamp(ts, tz=timezone.utc)


def plot_filename(report: SessionReport) -> str:
    safe = session_id(report).replace("|", "_").replace(" ", "_").replace(":", "-")
    return f"timeline_{safe}.png"


########################################################
# TIMELINE
########################################################

def plot_session_timeline(report: SessionReport, out_path) -> Path:
    """
    One bar per interval, coloured and raised by its state; low-confidence
    intervals are drawn lighter.
    """
    fig, ax = plt.subplots(figsize=(12, 3))
    width = report.interval_len / 86400.0  # matplotlib dates are in days
    for entry in report.timeline:
        left = to_datetime(report.start + entry.interval * report.interval_len)
        ax.bar(mdates.date2num(left), state_heights[entry.state], width=width, align="edge",
               color=state_colors[entry.state], alpha=0.35 + 0.65 * min(max(entry.confidence, 0.0), 1.0),
               edgecolor="none")

    ax.set_yticks(list(state_heights.values()))
    ax.set_yticklabels([label.value for label in state_heights])
    ax.xaxis.set_major_formatter(mdates.DateFormatter("%H:%M:%S"))
    ax.set_title(f"{report.app} session of {report.user} ({len(report.timeline)} intervals)")
    ax.set_xlabel("Time (UTC)")
    seen = [label for label in state_colors if any(e.state is label for e in report.timeline)]
    handles = [mpatches.Patch(color=state_colors[label], label=f"{label.value} ({label.description})")
               for label in seen]
    ax.legend(handles=handles,
              loc="upper left", bbox_to_anchor=(1.0, 1.0))
    fig.tight_layout()

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path


def plot_timelines(reports: Sequence[SessionReport], plot_dir) -> List[Path]:
    plot_dir = Path(plot_dir)
    paths = [plot_session_timeline(report, plot_dir / plot_filename(report))
             for report in reports if report.timeline]
    logger.info(f"Wrote {len(paths)} timeline plots to {plot_dir}")
    return paths
