"""Static figures rendered next to the CSV outputs (``--plot``).

matplotlib is imported lazily so the numeric core never needs it.
"""

from __future__ import annotations

import math
from pathlib import Path


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({
        "font.size": 10,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "savefig.dpi": 150,
        "savefig.bbox": "tight",
    })
    return plt


def _path_strip(ax, path: str, y: float = 0.0, height: float = 0.8, label=None):
    for j, c in enumerate(path):
        color = "#2b6cb0" if c == "E" else "#e2e8f0"
        ax.add_patch(_rect((j, y - height / 2), 1, height, color))
    if label is not None:
        ax.text(-0.5, y, label, ha="right", va="center", fontsize=8)


def _rect(xy, w, h, color):
    from matplotlib.patches import Rectangle

    return Rectangle(xy, w, h, facecolor=color, edgecolor="white", linewidth=0.4)


def plot_trace(trace: list[dict], skip_path: str, out: Path) -> Path:
    """Latent first difference, relative third difference and the skip path."""
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 4.5), sharex=True,
                                   gridspec_kw={"height_ratios": [3, 1]})
    rows = [r for r in trace if not math.isnan(r["dx_norm"])]
    xs = [r["row"] for r in rows]
    ax1.semilogy(xs, [r["dx_norm"] for r in rows], label="||Δx||")
    ax1.semilogy(xs, [r["d3x_norm"] for r in rows], label="||Δ³x||")
    ax1.semilogy(xs, [r["ratio"] for r in rows], "--", label="||Δ³x|| / ||Δx||")
    ax1.set_ylabel("norm")
    ax1.legend(frameon=False, fontsize=8)
    _path_strip(ax2, skip_path)
    ax2.set_xlim(0, len(skip_path))
    ax2.set_ylim(-0.5, 0.5)
    ax2.set_yticks([])
    ax2.set_xlabel("denoising step")
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_paths(rows: list[dict], out: Path, key: str = "path", title: str = "") -> Path:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 0.35 * len(rows) + 1))
    for k, row in enumerate(rows):
        _path_strip(ax, row[key], y=k, label=f"N={row['N']}")
    width = max(len(r[key]) for r in rows)
    ax.set_xlim(0, width)
    ax.set_ylim(-0.6, len(rows) - 0.4)
    ax.invert_yaxis()
    ax.set_yticks([])
    ax.set_xlabel("denoising step")
    if title:
        ax.set_title(title)
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_sweep(summary: list[list], out: Path) -> Path:
    """Mean speedup and rms error against delta, one line per c_max."""
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    by_cap: dict = {}
    for d, c, _, _, speed, err, _ in summary:
        by_cap.setdefault(c, []).append((float(d), float(speed), float(err)))
    for c, pts in sorted(by_cap.items()):
        pts.sort()
        ax1.plot([p[0] for p in pts], [p[1] for p in pts], "o-", label=f"C_max={c}")
        ax2.plot([p[0] for p in pts], [p[2] for p in pts], "o-", label=f"C_max={c}")
    for ax in (ax1, ax2):
        ax.set_xscale("symlog", linthresh=1e-3)
        ax.set_xlabel("δ")
    ax1.set_ylabel("speedup")
    ax2.set_ylabel("rms error vs full run")
    ax1.legend(frameon=False, fontsize=8)
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_histogram(hist: dict[int, int], out: Path) -> Path:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(list(hist), list(hist.values()), width=0.8, color="#2b6cb0")
    ax.set_xlabel("noise predictions per run")
    ax.set_ylabel("runs")
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_stats(series: list[dict], out: Path) -> Path:
    plt = _plt()
    pts = [s for s in series if s.get("chi2") is not None]
    fig, ax1 = plt.subplots(figsize=(5.5, 3.2))
    ax1.bar([s["N"] for s in pts], [s["chi2"] for s in pts], color="#2b6cb0", label="χ²")
    ax1.set_xlabel("skipped steps")
    ax1.set_ylabel("χ²")
    ax2 = ax1.twinx()
    ax2.plot([s["N"] for s in pts], [s["p"] for s in pts], "o-", color="#c05621", label="p")
    ax2.axhline(0.05, ls=":", color="grey")
    ax2.set_yscale("log")
    ax2.set_ylabel("p-value")
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_compare(rows: list[dict], out: Path) -> Path:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3))
    labels = [f"({r['variant']}) {r['eval_count']}" for r in rows]
    ax.bar(labels, [r["rms_err"] for r in rows], color="#2b6cb0")
    ax.set_ylabel("rms error of x_0 vs (a)")
    ax.set_xlabel("variant (noise predictions)")
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_accumulation(curve: list[tuple[int, float]], out: Path) -> Path:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot([len(curve) - 1 - s for s, _ in curve], [e for _, e in curve])
    ax.set_xlabel("denoising step")
    ax.set_ylabel("||x^skip - x^ori||")
    fig.savefig(out)
    plt.close(fig)
    return out
