"""Object-level views of masks and annotations.

Predicted objects are connected components of the localization mask, each
labeled by a majority vote over the damage mask. Ground-truth objects are the
annotated polygons themselves, so touching buildings stay separate on the
ground-truth side while they fuse on the prediction side.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch
from .raster import DAMAGE_CLASSES, DamageClass, SceneAnnotation, polygon_footprint

log = logging.getLogger(__name__)

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass
class Component:
    pixels: np.ndarray  # (k, 2) of (row, col)
    bbox: tuple[int, int, int, int]  # inclusive (x0, y0, x1, y1)
    area: int


@dataclass
class Detection:
    bbox: tuple[int, int, int, int]  # inclusive (x0, y0, x1, y1)
    label: DamageClass
    score: float = 1.0
    area: int = 0
    origin: str = "mask"  # "mask" | "annotation"


@dataclass
class DetectionSet:
    scene_id: str
    width: int
    height: int
    detections: list[Detection] = field(default_factory=list)
    # un-classified / empty ground-truth polygons left out
    excluded: int = 0

    def __len__(self):
        return len(self.detections)


def connected_components(loc: np.ndarray, connectivity: int = 8) -> list[Component]:
    """Label the nonzero pixels of ``loc``.

    Components are ordered by the top-left corner of their bbox (row first),
    ties broken by raster order of their first pixel.
    """
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 4 or 8")
    labels, n = ndimage.label(np.asarray(loc) != 0, structure=_STRUCTURES[connectivity])
    comps = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        rr, cc = np.nonzero(labels[sl] == lab)
        rr = rr + sl[0].start
        cc = cc + sl[1].start
        bbox = (sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1)
        comps.append((bbox[1], bbox[0], lab, Component(np.column_stack([rr, cc]), bbox, int(rr.size))))
    comps.sort(key=lambda t: t[:3])
    return [c for *_, c in comps]


def majority_vote_label(comp: Component, dam: np.ndarray) -> tuple[DamageClass, bool]:
    """Most frequent damage class under the component.

    Ties go to the more severe class. Returns ``(label, degenerate)`` where
    ``degenerate`` marks a component with no damage pixels at all, which is
    labeled no-damage.
    """
    vals = dam[comp.pixels[:, 0], comp.pixels[:, 1]]
    hist = np.bincount(vals, minlength=5)[1:5]
    if hist.sum() == 0:
        return DamageClass.NO_DAMAGE, True
    best = np.flatnonzero(hist == hist.max())[-1]
    return DamageClass(int(best) + 1), False


def masks_to_detections(
    loc: np.ndarray,
    dam: np.ndarray,
    connectivity: int = 8,
    min_area: int = 0,
    scene_id: str = "",
) -> DetectionSet:
    if loc.shape != dam.shape:
        raise DimensionMismatch(f"loc {loc.shape} vs dam {dam.shape}")
    h, w = loc.shape
    out = DetectionSet(scene_id, w, h)
    for comp in connected_components(loc, connectivity):
        if comp.area < min_area:
            continue
        label, degenerate = majority_vote_label(comp, dam)
        if degenerate:
            log.debug("%s: component at %s has no damage pixels", scene_id, comp.bbox)
        out.detections.append(Detection(comp.bbox, label, 1.0, comp.area, "mask"))
    return out


def annotation_to_detections(annotation: SceneAnnotation) -> DetectionSet:
    w, h = annotation.width, annotation.height
    out = DetectionSet(annotation.scene_id, w, h)
    for b in annotation.buildings:
        if b.label == DamageClass.UNCLASSIFIED:
            out.excluded += 1
            continue
        fp = polygon_footprint(b.vertices, w, h)
        if not fp.any():
            out.excluded += 1
            continue
        rows = np.flatnonzero(fp.any(axis=1))
        cols = np.flatnonzero(fp.any(axis=0))
        bbox = (int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))
        out.detections.append(Detection(bbox, b.label, 1.0, int(fp.sum()), "annotation"))
    return out


def iou(a, b) -> float:
    """Box IoU with inclusive pixel coordinates ``(x0, y0, x1, y1)``."""
    iw = min(a[2], b[2]) - max(a[0], b[0]) + 1
    ih = min(a[3], b[3]) - max(a[1], b[1]) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0] + 1) * (a[3] - a[1] + 1)
    area_b = (b[2] - b[0] + 1) * (b[3] - b[1] + 1)
    return inter / (area_a + area_b - inter)


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]) + 1
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]) + 1
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0] + 1) * (a[:, 3] - a[:, 1] + 1)
    area_b = (b[:, 2] - b[:, 0] + 1) * (b[:, 3] - b[:, 1] + 1)
    return inter / (area_a[:, None] + area_b[None, :] - inter)


# ---------------------------------------------------------------------------
# COCO-style serialization
# ---------------------------------------------------------------------------

COCO_CATEGORIES = [{"id": int(c), "name": c.subtype} for c in DAMAGE_CLASSES]


def detections_to_coco(sets: list[DetectionSet]) -> dict:
    images, anns = [], []
    for image_id, ds in enumerate(sets, start=1):
        images.append({"id": image_id, "file_name": ds.scene_id, "width": ds.width, "height": ds.height})
        for d in ds.detections:
            x0, y0, x1, y1 = d.bbox
            anns.append({
                "id": len(anns) + 1,
                "image_id": image_id,
                "bbox": [x0, y0, x1 - x0 + 1, y1 - y0 + 1],
                "category_id": int(d.label),
                "score": d.score,
                "area": d.area,
            })
    return {"images": images, "annotations": anns, "categories": COCO_CATEGORIES}


def coco_to_detections(data: dict, origin: str = "mask") -> list[DetectionSet]:
    sets = {}
    for img in data["images"]:
        sets[img["id"]] = DetectionSet(img["file_name"], img["width"], img["height"])
    for a in data["annotations"]:
        x, y, w, h = a["bbox"]
        d = Detection(
            (int(x), int(y), int(x + w - 1), int(y + h - 1)),
            DamageClass(a["category_id"]),
            float(a.get("score", 1.0)),
            int(a.get("area", w * h)),
            origin,
        )
        sets[a["image_id"]].detections.append(d)
    return list(sets.values())
