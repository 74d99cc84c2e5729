"""PNG renderings of the CSV plot-data written by the analysis subcommands."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

# fixed metadata keeps the files byte-stable across runs
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def _read(out_dir, name):
    p = os.path.join(out_dir, name)
    return pd.read_csv(p) if os.path.exists(p) else None


def radius_figure(scan: pd.DataFrame, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(scan["radius_m"], scan["diff"], marker="o")
    sel = scan[scan["selected"] == 1]
    ax.axvline(sel["radius_m"].iloc[0], color="grey", ls="--")
    ax.set_xlabel("radius (m)")
    ax.set_ylabel("target-day devices minus other-day mean")
    _save(fig, path)


def placebo_figure(placebo: pd.DataFrame, path):
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    colors = ["tab:orange" if t else "tab:blue" for t in placebo["is_target"]]
    a.bar(range(len(placebo)), placebo["survivors"], color=colors)
    a.set_xticks(range(len(placebo)), placebo["day"], rotation=90, fontsize=7)
    a.set_ylabel("likely voters")
    b.errorbar(range(len(placebo)), placebo["coef"], yerr=1.96 * placebo["se"], fmt="o")
    b.axhline(0, color="grey", lw=0.8)
    b.set_xticks(range(len(placebo)), placebo["day"], rotation=90, fontsize=7)
    b.set_ylabel("fraction black coefficient")
    _save(fig, path)


def histogram_figure(hist: pd.DataFrame, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(hist["bin_left"], hist["count"], width=hist["bin_right"] - hist["bin_left"], align="edge")
    ax.set_xlabel("wait (minutes)")
    ax.set_ylabel("voters")
    _save(fig, path)


def hourly_figure(hourly: pd.DataFrame, path):
    h = hourly[hourly["group"] == "all"]
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    a.bar(h["hour"], h["volume"])
    a.set_xlabel("hour of arrival")
    a.set_ylabel("voters")
    b.plot(h["hour"], h["mean_wait"], marker="o")
    b.set_xlabel("hour of arrival")
    b.set_ylabel("mean wait (minutes)")
    _save(fig, path)


def density_figure(density: pd.DataFrame, path, field="frac_black"):
    fig, ax = plt.subplots(figsize=(6, 4))
    for tag in ("d1", "d10"):
        d = density[density["group"] == f"{field}_{tag}"]
        if len(d):
            ax.plot(d["x"], d["density"], label=f"{field} {tag}")
    ax.set_xlim(0, 120)
    ax.set_xlabel("wait (minutes)")
    ax.legend()
    _save(fig, path)


def robustness_figure(rob: pd.DataFrame, path):
    panels = list(dict.fromkeys(rob["panel"]))
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 4), squeeze=False)
    for ax, p in zip(axes[0], panels):
        d = rob[rob["panel"] == p]
        ax.errorbar(range(len(d)), d["coef"], yerr=1.96 * d["se"], fmt="o")
        ax.set_xticks(range(len(d)), d["variant"], rotation=90, fontsize=7)
        ax.set_title(p)
    _save(fig, path)


def congestion_figure(lines: pd.DataFrame, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(lines["volume_k"], lines["pred_fb0"], label="fraction black = 0")
    ax.plot(lines["volume_k"], lines["pred_fb1"], label="fraction black = 1")
    ax.set_xlabel("registered voters per place (1000s)")
    ax.set_ylabel("predicted wait (minutes)")
    ax.legend()
    _save(fig, path)


def cces_figure(cc: pd.DataFrame, path):
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(cc["survey_adjusted"], cc["pipeline_adjusted"])
    for r in cc.itertuples():
        ax.annotate(r.region, (r.survey_adjusted, r.pipeline_adjusted), fontsize=7)
    ax.set_xlabel("survey (adjusted)")
    ax.set_ylabel("pings (adjusted)")
    _save(fig, path)


_FIGURES = [
    ("radius_scan.csv", "radius.png", radius_figure),
    ("placebo.csv", "placebo.png", placebo_figure),
    ("histogram.csv", "histogram.png", histogram_figure),
    ("hourly.csv", "hourly.png", hourly_figure),
    ("density.csv", "density_deciles.png", density_figure),
    ("robustness.csv", "robustness.png", robustness_figure),
    ("congestion_lines.csv", "congestion.png", congestion_figure),
    ("cces.csv", "cces.png", cces_figure),
]


def render_all(out_dir) -> list[str]:
    """Render every figure whose plot-data file exists; returns written paths."""
    fig_dir = os.path.join(out_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    written = []
    for src, name, fn in _FIGURES:
        df = _read(out_dir, src)
        if df is None or df.empty:
            continue
        path = os.path.join(fig_dir, name)
        fn(df, path)
        written.append(path)
    return written
