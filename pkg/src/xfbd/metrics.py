"""Pixel- and object-level scoring.

Pixel scoring follows the xView2 rules: localization F1 on the binary mask,
one F1 per damage class, their harmonic mean as the overall damage F1, and
``0.3 * loc + 0.7 * damage`` as the score. Object scoring matches connected
components against annotated buildings at a box-IoU threshold.

Counts are accumulated per scene and summed before any F1 is computed, so a
dataset report is a micro-average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, SceneMismatch
from .objects import DetectionSet, annotation_to_detections, iou_matrix, masks_to_detections
from .raster import DAMAGE_CLASSES, DamageClass, SceneAnnotation, build_target_masks

LOCALIZATION = "localization"
CLASS_KEYS = [c.subtype for c in DAMAGE_CLASSES]
COLLAPSED_KEYS = ["low", "high"]

LOW, HIGH = 1, 2
_COLLAPSE_LUT = np.array([0, LOW, LOW, HIGH, HIGH], dtype=np.uint8)


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def f1(self) -> float:
        return f1_from_counts(self.tp, self.fp, self.fn)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn}


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    """``2tp / (2tp + fp + fn)``; 1.0 when nothing was expected or predicted."""
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2 * tp / denom


@dataclass
class MetricConfig:
    iou_threshold: float = 0.5
    connectivity: int = 8
    min_area: int = 0
    collapse: bool = False


# ---------------------------------------------------------------------------
# Pixel level
# ---------------------------------------------------------------------------

def pixel_counts(pred: np.ndarray, gt: np.ndarray, cls: int, ignore: np.ndarray | None = None) -> Counts:
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    p = pred == cls
    g = gt == cls
    if ignore is not None:
        keep = ~ignore
        p &= keep
        g &= keep
    tp = int(np.count_nonzero(p & g))
    return Counts(tp, int(np.count_nonzero(p)) - tp, int(np.count_nonzero(g)) - tp)


def pixel_f1(pred, gt, cls, ignore=None) -> tuple[float, Counts]:
    c = pixel_counts(pred, gt, cls, ignore)
    return c.f1, c


def harmonic_mean(values) -> float:
    vals = [float(v) for v in values]
    if any(v == 0.0 for v in vals):
        return 0.0
    return len(vals) / sum(1.0 / v for v in vals)


def xview2_score(loc_f1: float, damage_f1s) -> tuple[float, float]:
    """Returns ``(overall_damage_f1, score)``."""
    overall = harmonic_mean(damage_f1s)
    return overall, 0.3 * loc_f1 + 0.7 * overall


def collapse_classes(mask: np.ndarray) -> np.ndarray:
    """Map {1, 2} to low (1) and {3, 4} to high (2); background stays 0."""
    return _COLLAPSE_LUT[np.asarray(mask)]


# ---------------------------------------------------------------------------
# Object level
# ---------------------------------------------------------------------------

@dataclass
class MatchAssignment:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_predictions: list[int] = field(default_factory=list)
    unmatched_ground_truths: list[int] = field(default_factory=list)


def match_detections(
    preds: DetectionSet,
    gts: DetectionSet,
    iou_threshold: float = 0.5,
    class_aware: bool = False,
) -> MatchAssignment:
    """Greedy one-to-one matching.

    Predictions are visited by score (desc), area (desc), then bbox; each one
    claims the still-free ground truth with the highest IoU, provided it is at
    least ``iou_threshold``. Equal IoUs go to the lower ground-truth index.
    """
    if preds.scene_id != gts.scene_id:
        raise SceneMismatch(f"{preds.scene_id!r} vs {gts.scene_id!r}")
    P, G = preds.detections, gts.detections
    out = MatchAssignment()
    if not P or not G:
        out.unmatched_predictions = list(range(len(P)))
        out.unmatched_ground_truths = list(range(len(G)))
        return out
    ious = iou_matrix([d.bbox for d in P], [d.bbox for d in G])
    if class_aware:
        same = np.array([d.label for d in P])[:, None] == np.array([g.label for g in G])[None, :]
        ious = np.where(same, ious, -1.0)
    order = sorted(range(len(P)), key=lambda i: (-P[i].score, -P[i].area, P[i].bbox))
    free = np.ones(len(G), dtype=bool)
    matched_p = set()
    for i in order:
        cand = np.where(free, ious[i], -1.0)
        j = int(np.argmax(cand))
        if cand[j] >= iou_threshold and cand[j] >= 0:
            free[j] = False
            matched_p.add(i)
            out.pairs.append((i, j, float(ious[i, j])))
    out.unmatched_predictions = [i for i in range(len(P)) if i not in matched_p]
    out.unmatched_ground_truths = [int(j) for j in np.flatnonzero(free)]
    return out


def object_f1(assignment: MatchAssignment) -> tuple[float, Counts]:
    c = Counts(len(assignment.pairs), len(assignment.unmatched_predictions), len(assignment.unmatched_ground_truths))
    return c.f1, c


def _subset(ds: DetectionSet, cls) -> DetectionSet:
    return DetectionSet(ds.scene_id, ds.width, ds.height, [d for d in ds.detections if d.label == cls])


def object_counts(preds: DetectionSet, gts: DetectionSet, cls=None, iou_threshold: float = 0.5) -> Counts:
    """Localization counts when ``cls`` is None, otherwise counts for one damage class."""
    if cls is None:
        return object_f1(match_detections(preds, gts, iou_threshold, class_aware=False))[1]
    return object_f1(match_detections(_subset(preds, cls), _subset(gts, cls), iou_threshold, class_aware=True))[1]


# ---------------------------------------------------------------------------
# Scene and dataset reports
# ---------------------------------------------------------------------------

@dataclass
class SceneCounts:
    scene_id: str = ""
    pixel: dict[str, Counts] = field(default_factory=dict)
    object: dict[str, Counts] = field(default_factory=dict)
    collapsed: dict[str, Counts] | None = None
    ignored_pixels: int = 0

    def __add__(self, other: "SceneCounts") -> "SceneCounts":
        def merge(a, b):
            if a is None or b is None:
                return a if b is None else b
            return {k: a.get(k, Counts()) + b.get(k, Counts()) for k in a.keys() | b.keys()}

        return SceneCounts(
            "",
            merge(self.pixel, other.pixel),
            merge(self.object, other.object),
            merge(self.collapsed, other.collapsed),
            self.ignored_pixels + other.ignored_pixels,
        )


@dataclass
class EvalReport:
    scene_id: str
    pixel: dict
    object: dict
    collapsed: dict | None
    counts: SceneCounts

    def to_dict(self) -> dict:
        c = self.counts
        out = {
            "scene_id": self.scene_id,
            "pixel": self.pixel,
            "object": self.object,
            "counts": {
                "pixel": {k: v.as_dict() for k, v in c.pixel.items()},
                "object": {k: v.as_dict() for k, v in c.object.items()},
                "ignored_pixels": c.ignored_pixels,
            },
        }
        if self.collapsed is not None:
            out["collapsed"] = self.collapsed
            out["counts"]["collapsed"] = {k: v.as_dict() for k, v in c.collapsed.items()}
        return out

    def flat_row(self) -> dict:
        row = {"scene_id": self.scene_id}
        row["pixel_localization_f1"] = self.pixel["localization_f1"]
        for k in CLASS_KEYS:
            row[f"pixel_{k}_f1"] = self.pixel["damage_f1"][k]
        row["pixel_overall_damage_f1"] = self.pixel["overall_damage_f1"]
        row["xview2_score"] = self.pixel["xview2_score"]
        row["object_localization_f1"] = self.object["localization_f1"]
        for k in CLASS_KEYS:
            row[f"object_{k}_f1"] = self.object["damage_f1"][k]
        if self.collapsed is not None:
            row["collapsed_low_f1"] = self.collapsed["low_f1"]
            row["collapsed_high_f1"] = self.collapsed["high_f1"]
        return row


def report_from_counts(counts: SceneCounts, scene_id: str = "") -> EvalReport:
    loc = counts.pixel[LOCALIZATION].f1
    dmg = {k: counts.pixel[k].f1 for k in CLASS_KEYS}
    overall, score = xview2_score(loc, [dmg[k] for k in CLASS_KEYS])
    pixel = {"localization_f1": loc, "damage_f1": dmg, "overall_damage_f1": overall, "xview2_score": score}
    obj = {
        "localization_f1": counts.object[LOCALIZATION].f1,
        "damage_f1": {k: counts.object[k].f1 for k in CLASS_KEYS},
    }
    collapsed = None
    if counts.collapsed is not None:
        collapsed = {"low_f1": counts.collapsed["low"].f1, "high_f1": counts.collapsed["high"].f1}
    return EvalReport(scene_id or counts.scene_id, pixel, obj, collapsed, counts)


def scene_counts(
    pred_loc: np.ndarray,
    pred_dam: np.ndarray,
    gt: SceneAnnotation,
    config: MetricConfig | None = None,
) -> SceneCounts:
    """Raw pixel and object counts for one scene.

    Damage is only predicted where ``pred_loc`` is nonzero; elsewhere the
    effective damage prediction is background. Pixels of un-classified
    ground-truth buildings are excluded from pixel scoring.
    """
    config = config or MetricConfig()
    shape = (gt.height, gt.width)
    if pred_loc.shape != shape or pred_dam.shape != shape:
        raise DimensionMismatch(f"{gt.scene_id}: prediction {pred_loc.shape}/{pred_dam.shape} vs ground truth {shape}")
    target = build_target_masks(gt)
    ploc = (pred_loc != 0).astype(np.uint8)
    pdam = np.where(ploc != 0, pred_dam, 0).astype(np.uint8)
    ign = target.ignore if target.ignore.any() else None

    out = SceneCounts(gt.scene_id, ignored_pixels=int(target.ignore.sum()))
    out.pixel[LOCALIZATION] = pixel_counts(ploc, target.loc, 1, ign)
    for c in DAMAGE_CLASSES:
        out.pixel[c.subtype] = pixel_counts(pdam, target.dam, int(c), ign)
    if config.collapse:
        cp, cg = collapse_classes(pdam), collapse_classes(target.dam)
        out.collapsed = {"low": pixel_counts(cp, cg, LOW, ign), "high": pixel_counts(cp, cg, HIGH, ign)}

    preds = masks_to_detections(ploc, pred_dam, config.connectivity, config.min_area, gt.scene_id)
    gts = annotation_to_detections(gt)
    out.object[LOCALIZATION] = object_counts(preds, gts, None, config.iou_threshold)
    for c in DAMAGE_CLASSES:
        out.object[c.subtype] = object_counts(preds, gts, c, config.iou_threshold)
    return out


def evaluate_scene(pred_loc, pred_dam, gt: SceneAnnotation, config: MetricConfig | None = None) -> EvalReport:
    return report_from_counts(scene_counts(pred_loc, pred_dam, gt, config))


def aggregate(reports) -> EvalReport:
    """Micro-average: sum every scene's counts, then compute F1s once."""
    total = None
    for r in reports:
        c = r.counts if isinstance(r, EvalReport) else r
        total = c if total is None else total + c
    if total is None:
        raise ValueError("nothing to aggregate")
    return report_from_counts(total, "ALL")
