from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

# column pairs (x, y) plotted by each recipe stub, 1-based as gnuplot counts them
_PLOTS = {
    "fig2": (
        "Link quality LQ (dB)", "P_fa", True,
        [(1, 3, "analytic"), (1, 4, "empirical"), (1, 6, "distance baseline")],
    ),
    "fig3": (
        "Link quality LQ (dB)", "P_md", True,
        [(1, 3, "analytic"), (1, 4, "empirical"), (1, 6, "distance baseline")],
    ),
    "fig4": ("Attacker distance R (m)", "P_md", True, [(1, 5, "empirical")]),
    "fig5": ("P_fa", "P_d", False, [(5, 6, "roc")]),
}


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".12g")
    return str(value)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with p.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} fields, header has {len(columns)}")
            writer.writerow([format_value(v) for v in row])
            count += 1
    logger.info("wrote %d rows to %s", count, p)
    return p


def write_gnuplot_stub(csv_path: str | Path, figure: str) -> Path:
    if figure not in _PLOTS:
        raise ValueError(f"no gnuplot stub for {figure!r}")
    xlabel, ylabel, logy, series = _PLOTS[figure]
    csv_path = Path(csv_path)
    lines = [
        f"# {figure}: plot data written next to this file",
        "set datafile separator ','",
        "set key left bottom",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
    ]
    if logy:
        lines.append("set logscale y")
    if figure == "fig4":
        lines.append("set logscale x")
    plots = ", ".join(
        f"'{csv_path.name}' every ::1 using {x}:{y} with linespoints title '{title}'"
        for x, y, title in series
    )
    lines.append(f"plot {plots}")
    stub = csv_path.with_suffix(".gp")
    stub.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return stub
