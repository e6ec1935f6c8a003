"""Score report output: JSON tree, per-scene CSV, and figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .metrics import EvalReport


def write_report(path, total: EvalReport, scenes: list[EvalReport], errors=(), figures: bool = True) -> list[Path]:
    """Write ``<path>`` (JSON), ``<stem>.csv`` and, optionally, ``<stem>_f1.png`` and
    ``<stem>_scenes.png``. Returns the paths written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "aggregate": total.to_dict(),
        "scenes": [r.to_dict() for r in scenes],
        "errors": list(errors),
    }
    path.write_text(json.dumps(doc, indent=1))
    written = [path]

    csv_path = path.with_suffix(".csv")
    rows = [r.flat_row() for r in scenes] + [total.flat_row()]
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[-1]))
        w.writeheader()
        w.writerows(rows)
    written.append(csv_path)

    if figures:
        from .plotting import plot_f1, plot_scene_scores

        f1_png = path.with_name(path.stem + "_f1.png")
        plot_f1(total, f1_png)
        scenes_png = path.with_name(path.stem + "_scenes.png")
        plot_scene_scores(scenes, scenes_png)
        written += [f1_png, scenes_png]
    return written
