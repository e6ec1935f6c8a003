"""Image buffers, WKT polygons, class-mask rasterization and building chips.

Images are plain ``uint8`` numpy arrays shaped ``(H, W, C)``; class masks are
``uint8`` arrays shaped ``(H, W)`` holding damage codes 0-4. Polygons live in
pixel space with ``x`` to the right and ``y`` down, and pixel ``(row, col)``
has its center at ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadJson, DimensionMismatch, EmptyPolygon, MalformedWkt, MissingFile, UnsupportedGeometry

log = logging.getLogger(__name__)


class DamageClass(IntEnum):
    BACKGROUND = 0
    NO_DAMAGE = 1
    MINOR_DAMAGE = 2
    MAJOR_DAMAGE = 3
    DESTROYED = 4
    # never written into a mask; scored as ignore
    UNCLASSIFIED = 5

    @property
    def subtype(self) -> str:
        return _CLASS_TO_SUBTYPE[self]

    @classmethod
    def from_subtype(cls, subtype: str) -> "DamageClass":
        try:
            return _SUBTYPE_TO_CLASS[subtype]
        except KeyError:
            raise ValueError(f"unknown damage subtype {subtype!r}") from None


_SUBTYPE_TO_CLASS = {
    "no-damage": DamageClass.NO_DAMAGE,
    "minor-damage": DamageClass.MINOR_DAMAGE,
    "major-damage": DamageClass.MAJOR_DAMAGE,
    "destroyed": DamageClass.DESTROYED,
    "un-classified": DamageClass.UNCLASSIFIED,
}
_CLASS_TO_SUBTYPE = {v: k for k, v in _SUBTYPE_TO_CLASS.items()}

DAMAGE_CLASSES = (
    DamageClass.NO_DAMAGE,
    DamageClass.MINOR_DAMAGE,
    DamageClass.MAJOR_DAMAGE,
    DamageClass.DESTROYED,
)


@dataclass
class BuildingPolygon:
    uid: str
    vertices: list[tuple[float, float]]
    label: DamageClass

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass
class SceneAnnotation:
    scene_id: str
    width: int
    height: int
    buildings: list[BuildingPolygon] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for b in self.buildings:
            if b.uid in seen:
                raise ValueError(f"duplicate building uid {b.uid!r} in scene {self.scene_id}")
            seen.add(b.uid)

    def get(self, uid: str) -> BuildingPolygon:
        for b in self.buildings:
            if b.uid == uid:
                return b
        raise KeyError(uid)


@dataclass
class TargetMasks:
    loc: np.ndarray
    dam: np.ndarray
    # pixels of un-classified buildings; excluded from pixel scoring
    ignore: np.ndarray
    warnings: list[str] = field(default_factory=list)


@dataclass
class Chip:
    pre_patch: np.ndarray
    post_patch: np.ndarray
    pad_size: int
    label: DamageClass
    source_uid: str
    scaled: bool = False


# ---------------------------------------------------------------------------
# WKT
# ---------------------------------------------------------------------------

_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def parse_wkt_polygon(text: str) -> list[tuple[float, float]]:
    """Parse a single-ring WKT ``POLYGON`` into a closed vertex list.

    Raises:
        MalformedWkt: syntax errors, non-numeric coordinates, or fewer than
            three distinct vertices.
        UnsupportedGeometry: multipolygons, other geometry types, or holes.
    """
    s = text.strip()
    head = s.split("(", 1)[0].strip().upper()
    if head.startswith("MULTIPOLYGON"):
        raise UnsupportedGeometry("MULTIPOLYGON is not supported")
    if not head.startswith("POLYGON"):
        if head:
            raise UnsupportedGeometry(f"unsupported geometry type {head.split()[0]}")
        raise MalformedWkt("text does not begin with POLYGON")
    if head not in ("POLYGON", "POLYGON Z", "POLYGONZ"):
        raise MalformedWkt(f"unexpected token after POLYGON: {head!r}")
    body = s[s.index("(") :] if "(" in s else ""
    if not body:
        raise MalformedWkt("missing coordinate list")

    depth = 0
    rings: list[str] = []
    start = None
    for i, ch in enumerate(body):
        if ch == "(":
            depth += 1
            if depth == 2:
                start = i + 1
            elif depth > 2:
                raise MalformedWkt("too many nested parentheses")
        elif ch == ")":
            if depth == 2:
                rings.append(body[start:i])
            depth -= 1
            if depth < 0:
                raise MalformedWkt("unbalanced parentheses")
            if depth == 0 and body[i + 1 :].strip():
                raise MalformedWkt("trailing characters after polygon")
        elif depth == 1 and ch not in " ,\t\r\n":
            raise MalformedWkt(f"unexpected character {ch!r} between rings")
    if depth != 0:
        raise MalformedWkt("unbalanced parentheses")
    if not rings:
        raise MalformedWkt("polygon has no ring")
    if len(rings) > 1:
        raise UnsupportedGeometry("polygons with holes are not supported")

    verts = []
    for pair in rings[0].split(","):
        parts = pair.split()
        if len(parts) not in (2, 3) or not all(_NUMBER.match(p) for p in parts):
            raise MalformedWkt(f"bad coordinate {pair.strip()!r}")
        verts.append((float(parts[0]), float(parts[1])))
    return normalize_ring(verts)


def normalize_ring(verts) -> list[tuple[float, float]]:
    verts = [(float(x), float(y)) for x, y in verts]
    if len(set(verts)) < 3:
        raise MalformedWkt("ring needs at least 3 distinct vertices")
    if verts[0] != verts[-1]:
        verts.append(verts[0])
    return verts


def format_wkt_polygon(vertices) -> str:
    return "POLYGON ((" + ", ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in vertices) + "))"


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def clamp_polygon(poly: BuildingPolygon, width: int, height: int) -> int:
    """Clamp vertices into ``[0, width] x [0, height]`` in place; returns how many moved."""
    moved = 0
    out = []
    for x, y in poly.vertices:
        cx, cy = min(max(x, 0.0), float(width)), min(max(y, 0.0), float(height))
        moved += (cx, cy) != (x, y)
        out.append((cx, cy))
    poly.vertices = out
    return moved


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def polygon_footprint(vertices, width: int, height: int) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the ring (even-odd rule)."""
    out = np.zeros((height, width), dtype=bool)
    v = np.asarray(vertices, dtype=np.float64)
    if len(v) < 3 or width == 0 or height == 0:
        return out
    if not np.array_equal(v[0], v[-1]):
        v = np.vstack([v, v[:1]])
    x0, y0 = v[:-1, 0], v[:-1, 1]
    x1, y1 = v[1:, 0], v[1:, 1]

    row_lo = max(int(math.floor(v[:, 1].min() - 0.5)), 0)
    row_hi = min(int(math.ceil(v[:, 1].max() - 0.5)), height - 1)
    for row in range(row_lo, row_hi + 1):
        py = row + 0.5
        crosses = (y0 > py) != (y1 > py)
        if not crosses.any():
            continue
        a0, b0, a1, b1 = x0[crosses], y0[crosses], x1[crosses], y1[crosses]
        xs = np.sort(a0 + (py - b0) * (a1 - a0) / (b1 - b0))
        # center px is inside for px in [xs[2k], xs[2k+1])
        for left, right in zip(xs[0::2], xs[1::2]):
            c0 = max(int(math.ceil(left - 0.5)), 0)
            c1 = min(int(math.ceil(right - 0.5)) - 1, width - 1)
            if c1 >= c0:
                out[row, c0 : c1 + 1] = True
    return out


def rasterize_polygon(poly: BuildingPolygon, mask: np.ndarray, class_code: int, warnings=None) -> int:
    """Paint ``class_code`` into ``mask`` at every pixel whose center is inside ``poly``.

    Later calls overwrite earlier ones. Returns the number of pixels painted;
    a zero-area result is appended to ``warnings`` when a list is given.
    """
    fp = polygon_footprint(poly.vertices, mask.shape[1], mask.shape[0])
    n = int(fp.sum())
    if n == 0:
        msg = f"building {poly.uid} rasterizes to zero pixels"
        log.debug(msg)
        if warnings is not None:
            warnings.append(msg)
        return 0
    mask[fp] = int(class_code)
    return n


def build_target_masks(annotation: SceneAnnotation) -> TargetMasks:
    """Rasterize an annotation into localization and damage targets.

    Un-classified buildings are painted as no-damage and also recorded in
    ``ignore`` so that scoring can skip them.
    """
    h, w = annotation.height, annotation.width
    dam = np.zeros((h, w), dtype=np.uint8)
    ignore = np.zeros((h, w), dtype=bool)
    warnings: list[str] = []
    for b in annotation.buildings:
        if b.label == DamageClass.UNCLASSIFIED:
            warnings.append(f"building {b.uid} is un-classified; painted as no-damage and ignored in scoring")
            fp = polygon_footprint(b.vertices, w, h)
            dam[fp] = DamageClass.NO_DAMAGE
            ignore |= fp
            if not fp.any():
                warnings.append(f"building {b.uid} rasterizes to zero pixels")
        else:
            # a classified building painted later un-ignores what it covers
            fp = polygon_footprint(b.vertices, w, h)
            if not fp.any():
                warnings.append(f"building {b.uid} rasterizes to zero pixels")
                continue
            dam[fp] = int(b.label)
            ignore[fp] = False
    return TargetMasks(loc=(dam != 0).astype(np.uint8), dam=dam, ignore=ignore, warnings=warnings)


# ---------------------------------------------------------------------------
# Chips
# ---------------------------------------------------------------------------

def extract_chip(pre: np.ndarray, post: np.ndarray, poly: BuildingPolygon, pad_size: int = 128) -> Chip:
    """Crop one building from a pre/post pair onto a zero-padded square.

    Pixels outside the footprint are zeroed. The crop is centered with offset
    ``(pad_size - extent) // 2``; if its bounding box exceeds ``pad_size`` it is
    shrunk by nearest-neighbor sampling and ``Chip.scaled`` is set.
    """
    if pre.shape != post.shape:
        raise DimensionMismatch(f"pre {pre.shape} vs post {post.shape}")
    h, w = pre.shape[:2]
    fp = polygon_footprint(poly.vertices, w, h)
    if not fp.any():
        raise EmptyPolygon(f"building {poly.uid} rasterizes to zero pixels")
    rows = np.flatnonzero(fp.any(axis=1))
    cols = np.flatnonzero(fp.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    keep = fp[r0:r1, c0:c1]

    def crop(img):
        patch = _as_hwc(img)[r0:r1, c0:c1].copy()
        patch[~keep] = 0
        return patch

    pre_p, post_p = crop(pre), crop(post)
    ph, pw = keep.shape
    scaled = False
    if ph > pad_size or pw > pad_size:
        scale = pad_size / max(ph, pw)
        nh, nw = max(1, int(ph * scale)), max(1, int(pw * scale))
        ri = np.minimum(((np.arange(nh) + 0.5) * ph / nh).astype(int), ph - 1)
        ci = np.minimum(((np.arange(nw) + 0.5) * pw / nw).astype(int), pw - 1)
        pre_p, post_p = pre_p[ri][:, ci], post_p[ri][:, ci]
        ph, pw, scaled = nh, nw, True
        log.info("building %s bbox exceeds pad %d; downscaled to %dx%d", poly.uid, pad_size, nw, nh)

    oy, ox = (pad_size - ph) // 2, (pad_size - pw) // 2
    out = []
    for p in (pre_p, post_p):
        canvas = np.zeros((pad_size, pad_size, p.shape[2]), dtype=p.dtype)
        canvas[oy : oy + ph, ox : ox + pw] = p
        out.append(canvas)
    return Chip(out[0], out[1], pad_size, poly.label, poly.uid, scaled)


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def _as_hwc(img: np.ndarray) -> np.ndarray:
    return img[:, :, None] if img.ndim == 2 else img


def to_float(img: np.ndarray) -> np.ndarray:
    """Floating view in [0, 1]."""
    return np.asarray(img, dtype=np.float64) / 255.0


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with Image.open(path) as im:
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    return _as_hwc(arr).copy()


def write_image(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise TypeError("images are stored as uint8")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    Image.fromarray(img).save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    """Load a single-channel class-coded mask; codes must lie in 0..4."""
    m = read_image(path)
    if m.shape[2] != 1:
        raise ValueError(f"{path}: class masks must be single-channel")
    m = m[:, :, 0]
    if m.max(initial=0) > 4:
        raise ValueError(f"{path}: mask contains codes outside 0..4")
    return m


def write_mask(path, mask: np.ndarray) -> None:
    write_image(path, np.asarray(mask, dtype=np.uint8))


def annotation_from_dict(data: dict, scene_id: str, width=None, height=None) -> SceneAnnotation:
    """Build a clamped, validated annotation from an xBD-style label dict.

    ``width``/``height`` fall back to ``metadata.width``/``metadata.height``.
    Rejected geometries and clamped vertices are recorded in ``warnings``.
    """
    meta = data.get("metadata") or {}
    width = int(width if width is not None else meta.get("width", 0))
    height = int(height if height is not None else meta.get("height", 0))
    if width <= 0 or height <= 0:
        raise BadJson(f"{scene_id}: image size unknown (no metadata.width/height)")
    try:
        feats = data["features"]["xy"]
    except (KeyError, TypeError):
        raise BadJson(f"{scene_id}: missing features.xy") from None

    warnings: list[str] = []
    buildings: list[BuildingPolygon] = []
    seen = set()
    for i, feat in enumerate(feats):
        props = feat.get("properties") or {}
        uid = str(props.get("uid", f"{scene_id}-{i}"))
        try:
            verts = parse_wkt_polygon(feat["wkt"])
            label = DamageClass.from_subtype(props.get("subtype", "no-damage"))
        except (MalformedWkt, UnsupportedGeometry, ValueError, KeyError) as e:
            warnings.append(f"rejected building {uid}: {type(e).__name__}: {e}")
            continue
        if uid in seen:
            warnings.append(f"rejected building {uid}: duplicate uid")
            continue
        seen.add(uid)
        poly = BuildingPolygon(uid, verts, label)
        moved = clamp_polygon(poly, width, height)
        if moved:
            warnings.append(f"building {uid}: clamped {moved} out-of-frame vertices")
        buildings.append(poly)
    return SceneAnnotation(scene_id, width, height, buildings, warnings)


def load_annotation(path, scene_id=None, width=None, height=None) -> SceneAnnotation:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise BadJson(f"{path}: {e}") from None
    return annotation_from_dict(data, scene_id or path.stem, width, height)


def annotation_to_dict(annotation: SceneAnnotation) -> dict:
    return {
        "metadata": {
            "width": annotation.width,
            "height": annotation.height,
            "img_name": annotation.scene_id,
        },
        "features": {
            "xy": [
                {
                    "wkt": format_wkt_polygon(b.vertices),
                    "properties": {"feature_type": "building", "uid": b.uid, "subtype": b.label.subtype},
                }
                for b in annotation.buildings
            ]
        },
    }


def save_annotation(path, annotation: SceneAnnotation) -> None:
    Path(path).write_text(json.dumps(annotation_to_dict(annotation), indent=1))
