"""Render the distribution data files to PNG figures.

Two plots accompany the delimited output: the per-assistant credibility
distribution of cited sources (stacked shares per factuality level) and the
response-level groundedness distributions (credible vs non-credible support
across conversations). Rendering reads the already-written CSVs, so figures
always agree with the shipped data files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_LEVEL_ORDER = [
    "VeryHigh", "High", "MostlyFactual", "Mixed", "Low", "VeryLow", "Satire", "NotRated",
]
_LEVEL_COLORS = {
    "VeryHigh": "#1a639c", "High": "#3d85c6", "MostlyFactual": "#76a5d7",
    "Mixed": "#b6b6b6", "Low": "#e69138", "VeryLow": "#cc4125",
    "Satire": "#8e5ba6", "NotRated": "#dddddd",
}


def render_credibility_distribution(distribution_csv: str | Path, out_png: str | Path) -> Path:
    """Stacked horizontal bars: share of citations per factuality level."""
    shares: dict[str, dict[str, float]] = {}
    with Path(distribution_csv).open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            assistant = row["assistant"]
            shares.setdefault(assistant, {})[row["factuality"]] = float(row["share"] or 0.0)

    assistants = sorted(shares)
    fig, ax = plt.subplots(figsize=(8, 1.2 + 0.6 * max(len(assistants), 1)))
    lefts = [0.0] * len(assistants)
    for level in _LEVEL_ORDER:
        widths = [shares[a].get(level, 0.0) for a in assistants]
        ax.barh(assistants, widths, left=lefts, label=level, color=_LEVEL_COLORS[level])
        lefts = [l + w for l, w in zip(lefts, widths)]
    ax.set_xlim(0, 1)
    ax.set_xlabel("share of cited sources")
    ax.set_title("Credibility distribution of cited sources")
    ax.legend(loc="center left", bbox_to_anchor=(1.01, 0.5), fontsize=8, frameon=False)
    fig.tight_layout()
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def render_groundedness_distribution(per_response_csv: str | Path, out_png: str | Path) -> Path:
    """Per-assistant histograms of response-level CG (blue) and NCG (red)."""
    cg: dict[str, list[float]] = {}
    ncg: dict[str, list[float]] = {}
    with Path(per_response_csv).open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            if not row["CG"]:
                continue
            assistant = row["assistant"]
            cg.setdefault(assistant, []).append(float(row["CG"]))
            ncg.setdefault(assistant, []).append(float(row["NCG"]))

    assistants = sorted(cg) or ["(no data)"]
    fig, axes = plt.subplots(
        len(assistants), 1, figsize=(8, 2.2 * len(assistants)), squeeze=False, sharex=True
    )
    bins = [i / 20 for i in range(21)]
    for ax, assistant in zip(axes[:, 0], assistants):
        ax.hist(cg.get(assistant, []), bins=bins, color="#3d85c6", alpha=0.75, label="credible")
        ax.hist(ncg.get(assistant, []), bins=bins, color="#cc4125", alpha=0.75, label="non-credible")
        ax.set_ylabel(assistant, fontsize=9)
        ax.legend(fontsize=8, frameon=False)
    axes[-1, 0].set_xlabel("share of verifiable units supported")
    fig.suptitle("Response-level groundedness", y=0.995)
    fig.tight_layout()
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png
