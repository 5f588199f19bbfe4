"""Report figures. Everything renders off-screen to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_histograms(hist_bright, hist_dark, path, threshold=None, title="", log=True):
    fig, ax = plt.subplots(figsize=(6.4, 4))
    for h, label, colour in ((hist_dark, "dark", "tab:blue"), (hist_bright, "bright", "tab:orange")):
        c, n = zip(*h.items()) if h.total else ((), ())
        ax.step(c, n, where="mid", label=label, color=colour, lw=0.8)
    if threshold is not None:
        ax.axvline(threshold, color="k", ls="--", lw=0.8, label=f"t = {threshold}")
    if log:
        ax.set_yscale("log")
    ax.set_xlabel("counts")
    ax.set_ylabel("occurrences")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_spam_curves(curves: dict, path, marks: dict | None = None):
    """``curves`` maps a label to ``(t, S)``; S is plotted in percent."""
    fig, axes = plt.subplots(1, len(curves), figsize=(5.2 * len(curves), 3.8), squeeze=False)
    for ax, (label, (t, s)) in zip(axes[0], curves.items()):
        ax.plot(t, 100 * np.asarray(s), lw=0.9)
        if marks and label in marks:
            tm, sm = marks[label]
            ax.plot([tm], [100 * sm], "o", color="tab:red")
            ax.annotate(f"t* = {tm}\nS = {100 * sm:.3f} %", (tm, 100 * sm), textcoords="offset points",
                        xytext=(8, 12))
        ax.set_yscale("log")
        ax.set_xlabel("threshold")
        ax.set_ylabel("S(t) [%]")
        ax.set_title(label)
    return _save(fig, path)


def plot_rabi(series, fit, path, title=""):
    fig, ax = plt.subplots(figsize=(7, 3.8))
    t_us = series.durations * 1e6
    ax.errorbar(t_us, series.mean_counts, yerr=series.sd, fmt=".", ms=2, lw=0.5, label="simulated")
    fine = np.linspace(series.durations[0], series.durations[-1], max(2000, 8 * len(series)))
    ax.plot(fine * 1e6, fit.predict(fine), lw=0.8, color="tab:red", label="fit")
    ax.set_xlabel("pulse length [us]")
    ax.set_ylabel("mean counts")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_timeline(timeline, path):
    from .sequencer import MS
    fig, ax = plt.subplots(figsize=(7, 0.5 + 0.35 * len(timeline.segments)))
    for row, (start, seg) in enumerate(zip(timeline.starts(), timeline.segments)):
        ax.barh(row, seg.duration_ns / MS, left=start / MS)
    ax.set_yticks(range(len(timeline.segments)))
    ax.set_yticklabels([s.kind.value for s in timeline.segments])
    ax.invert_yaxis()
    ax.set_xlabel("time [ms]")
    return _save(fig, path)


def plot_latency(latencies_ns, budget_ns, path):
    fig, ax = plt.subplots(figsize=(6, 3.6))
    lat = np.asarray(latencies_ns) / 1e3
    ax.hist(lat, bins=200, log=True)
    ax.axvline(budget_ns / 1e3, color="tab:red", ls="--", label="budget")
    ax.set_xscale("log")
    ax.set_xlabel("ingest to decision [us]")
    ax.set_ylabel("frames")
    ax.legend()
    return _save(fig, path)
