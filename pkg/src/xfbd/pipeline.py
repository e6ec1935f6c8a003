"""Scene ingest, focused-damage sample generation, and batch scoring.

Input scenes follow the xBD layout::

    <split>/images/<scene>_pre_disaster.png
    <split>/images/<scene>_post_disaster.png
    <split>/labels/<scene>_post_disaster.json
    <split>/secondary/<scene>_pre_disaster.png     (alternate-date pre image)

Each generated sample writes ``<id>_pre.png``, ``<id>_post.png``,
``<id>_target.png`` and ``<id>_label.json`` into ``<output>/<split>/``, and a
``manifest.json`` summarizing every split lands in the output root.
"""

from __future__ import annotations

import copy
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyPolygon,
    MissingFile,
    MissingSecondaryPre,
    NotACandidate,
    RegionTouchesBorder,
    UnpairedFile,
    XfbdError,
)
from .metrics import EvalReport, MetricConfig, aggregate, evaluate_scene
from .poisson import BlendConfig, blend, make_blend_region
from .raster import (
    DamageClass,
    SceneAnnotation,
    build_target_masks,
    load_annotation,
    polygon_footprint,
    read_image,
    read_mask,
    save_annotation,
    write_image,
    write_mask,
)

log = logging.getLogger(__name__)

DAMAGED = (DamageClass.MINOR_DAMAGE, DamageClass.MAJOR_DAMAGE, DamageClass.DESTROYED)


@dataclass
class Scene:
    scene_id: str
    pre_image: np.ndarray
    post_image: np.ndarray
    annotation: SceneAnnotation
    secondary_pre_image: np.ndarray | None = None

    @property
    def warnings(self) -> list[str]:
        return self.annotation.warnings


@dataclass
class CandidatePolicy:
    eligible_classes: tuple = DAMAGED
    exclude_uids: frozenset = frozenset()
    min_pixels: int = 16


@dataclass
class Sample:
    sample_id: str
    pre: np.ndarray
    post_composite: np.ndarray
    target_loc: np.ndarray
    target_dam: np.ndarray
    blended_uid: str
    blended_label: DamageClass
    annotation: SceneAnnotation
    iterations: int = 0
    converged: bool = True


@dataclass
class RunConfig:
    input_dir: Path
    output_dir: Path
    splits: list[str] = field(default_factory=list)
    split: str = "train"
    images_subdir: str = "images"
    labels_subdir: str = "labels"
    secondary_subdir: str = "secondary"
    blend: BlendConfig = field(default_factory=BlendConfig)
    policy: CandidatePolicy = field(default_factory=CandidatePolicy)
    workers: int = 1


# ---------------------------------------------------------------------------
# Scenes and samples
# ---------------------------------------------------------------------------

def ingest_scene(pre_path, post_path, label_path, secondary_pre_path=None, scene_id: str | None = None) -> Scene:
    pre = read_image(pre_path)
    post = read_image(post_path)
    if pre.shape != post.shape:
        raise DimensionMismatch(f"pre {pre.shape} vs post {post.shape}")
    if scene_id is None:
        scene_id = re.sub(r"_(pre|post)_disaster$", "", Path(pre_path).stem)
    h, w = pre.shape[:2]
    ann = load_annotation(label_path, scene_id, width=w, height=h)
    secondary = None
    if secondary_pre_path is not None:
        secondary = read_image(secondary_pre_path)
        if secondary.shape != pre.shape:
            raise DimensionMismatch(f"secondary pre {secondary.shape} vs pre {pre.shape}")
    for msg in ann.warnings:
        log.warning("%s: %s", scene_id, msg)
    return Scene(scene_id, pre, post, ann, secondary)


def _candidate_problem(scene: Scene, poly, policy: CandidatePolicy, dilation: int) -> str | None:
    if poly.label not in policy.eligible_classes:
        return f"label {poly.label.subtype} is not eligible"
    if poly.uid in policy.exclude_uids:
        return "excluded"
    h, w = scene.pre_image.shape[:2]
    n = int(polygon_footprint(poly.vertices, w, h).sum())
    if n < policy.min_pixels:
        return f"footprint of {n} px is below min_pixels={policy.min_pixels}"
    try:
        make_blend_region(poly, w, h, dilation)
    except (RegionTouchesBorder, EmptyPolygon) as e:
        return str(e)
    return None


def select_blend_candidates(scene: Scene, policy: CandidatePolicy | None = None, dilation: int = 2):
    """Buildings that may be blended: eligible class, not excluded, big enough, off the border."""
    policy = policy or CandidatePolicy()
    return [b for b in scene.annotation.buildings if _candidate_problem(scene, b, policy, dilation) is None]


def _safe(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", s)


def relabel_focused(annotation: SceneAnnotation, uid: str) -> SceneAnnotation:
    """Every building becomes no-damage except ``uid``, which keeps its label."""
    out = copy.deepcopy(annotation)
    out.warnings = []
    for b in out.buildings:
        if b.uid != uid:
            b.label = DamageClass.NO_DAMAGE
    return out


def generate_sample(scene: Scene, building_uid: str, blend_cfg: BlendConfig | None = None, policy: CandidatePolicy | None = None) -> Sample:
    """Blend one damaged building from the post image into the pre image.

    The network input pair is (secondary pre image, composite); targets mark
    every other building as no-damage.
    """
    blend_cfg = blend_cfg or BlendConfig()
    try:
        poly = scene.annotation.get(building_uid)
    except KeyError:
        raise NotACandidate(f"{scene.scene_id}: no building {building_uid}") from None
    problem = _candidate_problem(scene, poly, policy or CandidatePolicy(), blend_cfg.dilation_px)
    if problem:
        raise NotACandidate(f"{scene.scene_id}/{building_uid}: {problem}")
    if scene.secondary_pre_image is None:
        raise MissingSecondaryPre(scene.scene_id)

    h, w = scene.pre_image.shape[:2]
    region = make_blend_region(poly, w, h, blend_cfg.dilation_px)
    composite, report = blend(scene.pre_image, scene.post_image, region, blend_cfg)
    if not report.converged:
        log.warning("%s/%s: blend did not converge (residual %.3g)", scene.scene_id, building_uid, report.relative_residual)
    ann = relabel_focused(scene.annotation, building_uid)
    ann.scene_id = f"{_safe(scene.scene_id)}_{_safe(building_uid)}"
    targets = build_target_masks(ann)
    return Sample(
        sample_id=ann.scene_id,
        pre=scene.secondary_pre_image,
        post_composite=composite,
        target_loc=targets.loc,
        target_dam=targets.dam,
        blended_uid=building_uid,
        blended_label=poly.label,
        annotation=ann,
        iterations=report.iterations,
        converged=report.converged,
    )


def write_sample(sample: Sample, out_dir) -> None:
    out_dir = Path(out_dir)
    sid = sample.sample_id
    write_image(out_dir / f"{sid}_pre.png", sample.pre)
    write_image(out_dir / f"{sid}_post.png", sample.post_composite)
    write_mask(out_dir / f"{sid}_target.png", sample.target_dam)
    save_annotation(out_dir / f"{sid}_label.json", sample.annotation)


def self_check_sample(out_dir, sample_id: str) -> list[str]:
    """Re-read a written sample and list violations of the one-damaged-building rule."""
    out_dir = Path(out_dir)
    problems = []
    ann = load_annotation(out_dir / f"{sample_id}_label.json", sample_id)
    damaged = [b for b in ann.buildings if b.label != DamageClass.NO_DAMAGE]
    if len(damaged) != 1:
        return [f"{sample_id}: {len(damaged)} buildings labeled other than no-damage"]
    hero = damaged[0]
    if hero.label not in DAMAGED:
        problems.append(f"{sample_id}: blended building has label {hero.label.name}")
    target = read_mask(out_dir / f"{sample_id}_target.png")
    if target.shape != (ann.height, ann.width):
        problems.append(f"{sample_id}: target size {target.shape} disagrees with label")
        return problems
    if not np.array_equal(target, build_target_masks(ann).dam):
        problems.append(f"{sample_id}: target mask disagrees with label file")
    fp = polygon_footprint(hero.vertices, ann.width, ann.height)
    if np.any((target > 1) & ~fp):
        problems.append(f"{sample_id}: damaged pixels outside the blended building")
    for suffix in ("pre", "post"):
        img = read_image(out_dir / f"{sample_id}_{suffix}.png")
        if img.shape[:2] != target.shape:
            problems.append(f"{sample_id}: {suffix} image size {img.shape[:2]} disagrees with target")
    return problems


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def discover_scenes(split_dir: Path, cfg: RunConfig) -> list[dict]:
    labels = sorted((split_dir / cfg.labels_subdir).glob("*.json"))
    out = []
    for lp in labels:
        scene = re.sub(r"_post_disaster$", "", lp.stem)
        images = split_dir / cfg.images_subdir
        out.append({
            "scene_id": scene,
            "pre": images / f"{scene}_pre_disaster.png",
            "post": images / f"{scene}_post_disaster.png",
            "labels": lp,
            "secondary": split_dir / cfg.secondary_subdir / f"{scene}_pre_disaster.png",
        })
    return out


def _process_scene(entry: dict, out_dir: Path, cfg: RunConfig) -> dict:
    sid = entry["scene_id"]
    result = {"scene_id": sid, "samples": [], "skipped": None, "error": None, "warnings": []}
    if not entry["secondary"].is_file():
        result["skipped"] = "no secondary pre-image"
        log.info("%s: skipped, no secondary pre-image", sid)
        return result
    try:
        scene = ingest_scene(entry["pre"], entry["post"], entry["labels"], entry["secondary"], sid)
        result["warnings"] = list(scene.warnings)
        candidates = select_blend_candidates(scene, cfg.policy, cfg.blend.dilation_px)
        if not candidates:
            result["skipped"] = "no blend candidates"
        for poly in candidates:
            sample = generate_sample(scene, poly.uid, cfg.blend, cfg.policy)
            write_sample(sample, out_dir)
            problems = self_check_sample(out_dir, sample.sample_id)
            if problems:
                raise XfbdError("; ".join(problems))
            result["samples"].append({
                "sample_id": sample.sample_id,
                "uid": sample.blended_uid,
                "label": sample.blended_label.subtype,
                "cg_iterations": sample.iterations,
                "converged": sample.converged,
            })
    except (XfbdError, ValueError, OSError) as e:
        result["error"] = f"{type(e).__name__}: {e}"
        log.error("%s: %s", sid, result["error"])
    return result


def _check_writable(path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".xfbd-write-probe"
    probe.write_text("")
    probe.unlink()


def generate_dataset(cfg: RunConfig) -> dict:
    """Generate every (scene, candidate) sample and return the manifest dict.

    Per-scene failures are recorded under ``failed`` and do not stop the run;
    an unwritable output directory raises immediately.
    """
    out_root = Path(cfg.output_dir)
    _check_writable(out_root)
    splits = cfg.splits or [cfg.split]
    manifest = {"splits": {}, "config": _config_summary(cfg)}
    for split in splits:
        split_dir = Path(cfg.input_dir) / split if cfg.splits else Path(cfg.input_dir)
        if not split_dir.is_dir():
            raise MissingFile(str(split_dir))
        out_dir = out_root / split
        _check_writable(out_dir)
        entries = discover_scenes(split_dir, cfg)
        with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
            results = list(pool.map(lambda e: _process_scene(e, out_dir, cfg), entries))
        manifest["splits"][split] = _reduce(split, results)
    total = sum(s["sample_count"] for s in manifest["splits"].values())
    if total == 0:
        log.warning("no samples generated")
    (out_root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def _reduce(split: str, results: list[dict]) -> dict:
    per_class = {c.subtype: 0 for c in reversed(DAMAGED)}
    samples, skipped, failed, warnings = [], [], [], {}
    sources = 0
    for r in sorted(results, key=lambda r: r["scene_id"]):
        if r["error"]:
            failed.append({"scene_id": r["scene_id"], "error": r["error"]})
            continue
        if r["skipped"]:
            skipped.append({"scene_id": r["scene_id"], "reason": r["skipped"]})
        if r["warnings"]:
            warnings[r["scene_id"]] = r["warnings"]
        if r["samples"]:
            sources += 1
        for s in r["samples"]:
            per_class[s["label"]] += 1
            samples.append(s)
    return {
        "split": split,
        "sample_count": len(samples),
        "source_image_count": sources,
        "per_class": per_class,
        "samples": samples,
        "skipped": skipped,
        "failed": failed,
        "warnings": warnings,
    }


def _config_summary(cfg: RunConfig) -> dict:
    return {
        "blend": asdict(cfg.blend),
        "eligible_classes": [c.subtype for c in cfg.policy.eligible_classes],
        "exclude_uids": sorted(cfg.policy.exclude_uids),
        "min_pixels": cfg.policy.min_pixels,
    }


def rescan(output_dir) -> dict:
    """Count emitted samples per split from the files on disk."""
    out = {}
    for split_dir in sorted(p for p in Path(output_dir).iterdir() if p.is_dir()):
        per_class = {c.subtype: 0 for c in reversed(DAMAGED)}
        n = 0
        for lp in sorted(split_dir.glob("*_label.json")):
            ann = load_annotation(lp)
            for b in ann.buildings:
                if b.label != DamageClass.NO_DAMAGE:
                    per_class[b.label.subtype] += 1
            n += 1
        out[split_dir.name] = {"sample_count": n, "per_class": per_class}
    return out


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

_GT_SUFFIXES = ("_label.json", "_post_disaster.json")
_SINGLE_PRED = ("_pred.png", "_target.png", ".png")


def _gt_stems(gt_dir: Path) -> dict[str, Path]:
    stems = {}
    for p in sorted(gt_dir.glob("*.json")):
        for suf in _GT_SUFFIXES:
            if p.name.endswith(suf):
                stems[p.name[: -len(suf)]] = p
                break
    return stems


def find_prediction(pred_dir: Path, stem: str):
    """Return ``(loc_path, dam_path)``; both point to the same file for single-mask predictions."""
    loc, dam = pred_dir / f"{stem}_loc.png", pred_dir / f"{stem}_dam.png"
    if loc.is_file() and dam.is_file():
        return loc, dam
    for suf in _SINGLE_PRED:
        p = pred_dir / f"{stem}{suf}"
        if p.is_file():
            return p, p
    return None


def score_run(pred_dir, gt_dir, metric_cfg: MetricConfig | None = None):
    """Score every ground-truth scene in ``gt_dir`` against ``pred_dir``.

    Returns ``(aggregate_report, scene_reports, errors)``. A missing
    prediction raises ``UnpairedFile`` naming every unpaired stem; size
    mismatches are collected in ``errors`` and the scene is left out.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gts = _gt_stems(gt_dir)
    if not gts:
        raise MissingFile(f"no ground-truth label files in {gt_dir}")
    pairs, missing = {}, []
    for stem in gts:
        found = find_prediction(pred_dir, stem)
        if found is None:
            missing.append(stem)
        else:
            pairs[stem] = found
    if missing:
        raise UnpairedFile(missing)

    scenes: list[EvalReport] = []
    errors = []
    for stem, label_path in gts.items():
        loc_path, dam_path = pairs[stem]
        loc = read_mask(loc_path)
        dam = loc if dam_path == loc_path else read_mask(dam_path)
        width = height = None
        tgt = gt_dir / f"{stem}_target.png"
        if tgt.is_file():
            height, width = read_mask(tgt).shape
        try:
            ann = load_annotation(label_path, stem, width=width, height=height)
            scenes.append(evaluate_scene(loc, dam, ann, metric_cfg))
        except DimensionMismatch as e:
            errors.append({"scene_id": stem, "error": str(e)})
            log.error("%s: %s", stem, e)
    if not scenes:
        raise DimensionMismatch("no scene could be scored: " + "; ".join(e["error"] for e in errors))
    return aggregate(scenes), scenes, errors
