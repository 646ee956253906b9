"""
Plotting

Mean-and-band line plots rendered from CSV, the only source of plotted data.
SVG output is byte-stable for a given input and matplotlib version: fixed
figure size, fixed hash salt, text kept as text with generic font families,
no timestamp in the metadata.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from src.errors import PlotError  # noqa: E402

logger = logging.getLogger(__name__)

FIGURE_SIZE = (8.0, 5.0)
AXIS_PADDING = 0.05

SVG_STYLE = {
    "svg.hashsalt": "nsvgd",
    "svg.fonttype": "none",
    "font.family": "sans-serif",
    "path.simplify": False,
}


@dataclass(frozen=True)
class PlotSpec:
    """
    What to draw from a long-format CSV

    Rows sharing the `group` columns form one curve; rows sharing a group and
    an x value are averaged, and the band is +-1 sample standard deviation.
    """

    x: str
    y: str
    group: Tuple[str, ...] = ()
    title: str = ""
    xlabel: Optional[str] = None
    ylabel: Optional[str] = None
    logx: bool = False
    label: Optional[Callable] = field(default=None, compare=False)

    @property
    def columns(self):
        return (self.x, self.y) + tuple(self.group)

    def label_for(self, key):
        if self.label is not None:
            return self.label(dict(zip(self.group, key)))
        if not self.group:
            return self.y
        return ", ".join(f"{column}={value}" for column, value in zip(self.group, key))


def read_frame(csv_path, spec):
    """
    Load a CSV and check it against a plot spec

    Raises:
        PlotError: If the file cannot be parsed, a spec column is missing or
            the x/y columns are not numeric
    """
    try:
        frame = pd.read_csv(csv_path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise PlotError(f"cannot read CSV {csv_path}: {exc}") from exc
    missing = [column for column in spec.columns if column not in frame.columns]
    if missing:
        raise PlotError(f"unknown columns {missing}; CSV has {list(frame.columns)}")
    for column in (spec.x, spec.y):
        if not pd.api.types.is_numeric_dtype(frame[column]):
            raise PlotError(f"column {column!r} is not numeric")
    frame = frame.dropna(subset=[spec.x, spec.y])
    if frame.empty:
        raise PlotError(f"{csv_path} has no rows with values for {spec.x} and {spec.y}")
    return frame


def summarize(frame, spec):
    """Per (group, x): mean and sample std of y; a single sample gets std 0"""
    keys = list(spec.group) + [spec.x]
    stats = frame.groupby(keys, sort=True)[spec.y].agg(["mean", "std"]).reset_index()
    stats["std"] = stats["std"].fillna(0.0)
    return stats


def padded_limits(low, high, padding=AXIS_PADDING):
    span = high - low
    if not span > 0:
        span = max(abs(high), 1.0)
    return low - padding * span, high + padding * span


def plot_frame(frame, spec, out_path):
    """
    Draw one SVG from an already loaded frame

    Each curve is tagged line-<i> and its band band-<i> in the SVG.

    Returns:
        Number of curves drawn
    """
    stats = summarize(frame, spec)
    with plt.rc_context(SVG_STYLE):
        fig, ax = plt.subplots(figsize=FIGURE_SIZE)
        groups = stats.groupby(list(spec.group), sort=True) if spec.group else [((), stats)]
        count = 0
        for key, part in groups:
            key = key if isinstance(key, tuple) else (key,)
            x = part[spec.x].to_numpy(dtype=float)
            mean = part["mean"].to_numpy(dtype=float)
            std = part["std"].to_numpy(dtype=float)
            (line,) = ax.plot(x, mean, marker="o", markersize=3, label=spec.label_for(key))
            line.set_gid(f"line-{count}")
            band = ax.fill_between(x, mean - std, mean + std, color=line.get_color(), alpha=0.2, linewidth=0)
            band.set_gid(f"band-{count}")
            count += 1

        lower = (stats["mean"] - stats["std"]).to_numpy()
        upper = (stats["mean"] + stats["std"]).to_numpy()
        ax.set_ylim(*padded_limits(float(np.min(lower)), float(np.max(upper))))
        if spec.logx:
            ax.set_xscale("log")
            ax.margins(x=AXIS_PADDING)
        else:
            ax.set_xlim(*padded_limits(float(stats[spec.x].min()), float(stats[spec.x].max())))
        ax.set_xlabel(spec.xlabel or spec.x)
        ax.set_ylabel(spec.ylabel or spec.y)
        if spec.title:
            ax.set_title(spec.title)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="best", fontsize="small")
        fig.tight_layout()
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    logger.info("wrote %s (%d curves)", out_path, count)
    return count


def plot_csv(csv_path, out_path, spec):
    """
    Render a CSV to a deterministic SVG

    Args:
        csv_path: CSV with the documented header
        out_path: Destination .svg
        spec: PlotSpec naming x, y and group columns

    Returns:
        Number of curves drawn

    Raises:
        PlotError: On malformed CSV or unknown columns
    """
    return plot_frame(read_frame(csv_path, spec), spec, out_path)


def parse_plot_spec(x, y, group=None, title="", logx=False):
    """PlotSpec from CLI strings; group is a comma-separated column list"""
    columns = tuple(c.strip() for c in (group or "").split(",") if c.strip())
    return PlotSpec(x=x, y=y, group=columns, title=title, logx=logx)
