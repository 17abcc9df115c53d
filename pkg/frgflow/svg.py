"""Standalone SVG line charts"""

from __future__ import annotations

import math
from pathlib import Path
from typing import List, NamedTuple, Sequence, Tuple, Union

import matplotlib
from matplotlib.figure import Figure

from .exceptions import PreconditionError

FIGSIZE = (6.4, 4.0)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

# Fixed salt and no font embedding keep the SVG bytes a function of the input.
SVG_RC = {"svg.hashsalt": "frg-flow", "svg.fonttype": "none", "path.simplify": False}


class Series(NamedTuple):
    label: str
    x: Sequence[float]
    y: Sequence[float]


def finite_series(
    series: Sequence[Union[Series, Tuple[str, Sequence[float], Sequence[float]]]],
) -> List[Series]:
    """Drop non-finite points and empty series

    Raises:
        PreconditionError: If a series has mismatched lengths or nothing finite remains
    """
    cleaned = []
    for entry in series:
        label, xs, ys = Series(*entry)
        if len(xs) != len(ys):
            raise PreconditionError(f"series {label!r} has mismatched x and y lengths")
        points = [
            (float(a), float(b)) for a, b in zip(xs, ys) if math.isfinite(a) and math.isfinite(b)
        ]
        if points:
            cleaned.append(Series(str(label), [p[0] for p in points], [p[1] for p in points]))
    if not cleaned:
        raise PreconditionError("render_svg needs at least one nonempty series")
    return cleaned


def render_svg(
    series: Sequence[Union[Series, Tuple[str, Sequence[float], Sequence[float]]]],
    path: Union[str, Path],
    title: str = "",
    x_label: str = "x",
    y_label: str = "y",
) -> None:
    """Write a line chart with one line per series, axes, labels and a legend

    Each series line is grouped under the SVG id ``series-<index>``. Output
    bytes depend only on the arguments. Non-finite points are skipped.

    Raises:
        PreconditionError: If there is no series or no finite point
        OSError: If the path is not writable
    """
    cleaned = finite_series(series)
    with matplotlib.rc_context(SVG_RC):
        fig = Figure(figsize=FIGSIZE)
        ax = fig.subplots()
        for index, entry in enumerate(cleaned):
            (line,) = ax.plot(
                entry.x,
                entry.y,
                color=COLORS[index % len(COLORS)],
                linewidth=1.5,
                label=entry.label,
            )
            line.set_gid(f"series-{index}")
        if title:
            ax.set_title(title)
        ax.set_xlabel(x_label)
        ax.set_ylabel(y_label)
        ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
