"""Figures for the report commands, rendered to files with the Agg backend."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def skyplot(rows, path, mask: float = 30.0, title: str = "Sky plot") -> None:
    """``rows``: iterable of (sat label, azimuth deg, elevation deg, selected)."""
    fig = plt.figure(figsize=(5.5, 5.5))
    ax = fig.add_subplot(projection="polar")
    ax.set_theta_zero_location("N")
    ax.set_theta_direction(-1)
    ax.set_rlim(90, 0)
    ax.set_rticks([0, 30, 60, 90])
    th = np.linspace(0, 2 * math.pi, 181)
    ax.plot(th, np.full_like(th, mask), "k--", lw=0.8, label=f"{mask:.0f} deg mask")
    for label, az, el, sel in rows:
        colour = "tab:blue" if sel else "tab:gray"
        ax.scatter(math.radians(az), el, c=colour, s=36, zorder=3)
        ax.annotate(label, (math.radians(az), el), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_title(title)
    ax.legend(loc="lower left", fontsize=7)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def residual_bars(rows, path, mask: float = 30.0) -> None:
    """``rows``: (sat label, elevation, mean residual)."""
    rows = sorted(rows, key=lambda r: r[1])
    labels = [r[0] for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(rows)), 4))
    colours = ["tab:red" if r[1] < mask else "tab:blue" for r in rows]
    ax.bar(x, [r[2] for r in rows], color=colours)
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_xticks(x, labels, rotation=90, fontsize=7)
    ax.set_ylabel("pseudorange residual (m)")
    ax.set_xlabel(f"satellites by elevation (red: below {mask:.0f} deg)")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def error_series_plot(series: dict, path) -> None:
    """East and north error against time for each labelled series."""
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for label, s in series.items():
        if len(s) == 0:
            continue
        t = s.time - s.time[0]
        axes[0].plot(t, s.east, lw=0.9, label=label)
        axes[1].plot(t, s.north, lw=0.9, label=label)
    axes[0].set_ylabel("east error (m)")
    axes[1].set_ylabel("north error (m)")
    axes[1].set_xlabel("time (s)")
    for ax in axes:
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
