"""Deterministic SVG line charts for the metrics CSVs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import metrics

# pinned so identical inputs render byte-identical SVGs
_RC = {"svg.hashsalt": "cdqn", "svg.fonttype": "path"}


def render_chart(csv_path, columns, out_path) -> None:
    """Plot the named columns against the file's first column, as SVG.

    Output bytes depend only on the CSV contents; the SVG hash salt is
    pinned and no timestamp metadata is written.
    """
    header, rows = metrics.read_rows(csv_path)
    missing = [c for c in columns if c not in header]
    if missing:
        raise ValueError(f"render_chart: column(s) not in {csv_path}: {', '.join(missing)}")
    if not columns:
        raise ValueError("render_chart: no columns requested")
    if not rows:
        raise ValueError(f"render_chart: no data rows in {csv_path}")
    x_name = header[0]
    xs = [r[x_name] for r in rows]
    marker = "o" if len(rows) < 2 else None
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(8.0, 4.5))
        for col in columns:
            ax.plot(xs, [r[col] for r in rows], label=col, linewidth=1.4, marker=marker)
        ax.set_xlabel(x_name)
        ax.set_ylabel("value")
        ax.grid(True, alpha=0.3)
        ax.legend(loc="upper left")
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
