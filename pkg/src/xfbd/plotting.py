"""Figures written next to score reports and dataset manifests."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import CLASS_KEYS, EvalReport  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.titlesize": 10,
    "legend.frameon": False,
}


def plot_f1(report: EvalReport, path) -> None:
    """Grouped bars: pixel vs object F1 for localization and each damage class."""
    names = ["localization"] + CLASS_KEYS
    pix = [report.pixel["localization_f1"]] + [report.pixel["damage_f1"][k] for k in CLASS_KEYS]
    obj = [report.object["localization_f1"]] + [report.object["damage_f1"][k] for k in CLASS_KEYS]
    x = np.arange(len(names))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        ax.bar(x - 0.2, pix, 0.4, label="pixel", color="#4c72b0")
        ax.bar(x + 0.2, obj, 0.4, label="object", color="#dd8452")
        ax.set_xticks(x, names, rotation=20)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("F1")
        ax.set_title(f"xView2 score {report.pixel['xview2_score']:.3f}")
        ax.legend(loc="upper right")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


def plot_scene_scores(reports: list[EvalReport], path) -> None:
    """Per-scene pixel score against object localization F1."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.0, 4.0))
        ax.scatter([r.pixel["xview2_score"] for r in reports], [r.object["localization_f1"] for r in reports], s=12)
        ax.plot([0, 1], [0, 1], lw=0.8, color="0.6")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("pixel xView2 score")
        ax.set_ylabel("object localization F1")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


def plot_manifest(manifest: dict, path) -> None:
    """Stacked per-class sample counts for each split."""
    splits = list(manifest["splits"])
    classes = list(next(iter(manifest["splits"].values()))["per_class"]) if splits else []
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        bottom = np.zeros(len(splits))
        for cls in classes:
            vals = np.array([manifest["splits"][s]["per_class"][cls] for s in splits], dtype=float)
            ax.bar(splits, vals, bottom=bottom, label=cls)
            bottom += vals
        ax.set_ylabel("samples")
        if classes:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
