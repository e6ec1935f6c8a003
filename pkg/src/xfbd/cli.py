"""Command-line entry point: ``xfbd <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from .errors import XfbdError
from .raster import extract_chip, load_annotation, read_image, write_image

log = logging.getLogger("xfbd")


def _add_blend_flags(p):
    g = p.add_argument_group("blending")
    g.add_argument("--dilation-px", type=int)
    g.add_argument("--cg-tolerance", type=float)
    g.add_argument("--cg-max-iters", type=int)
    g.add_argument("--window-margin-px", type=int)


def _settings(args, keys) -> dict:
    base = cfgmod.load_config(args.config) if getattr(args, "config", None) else {}
    return cfgmod.merge(base, {k: getattr(args, k, None) for k in keys})


def cmd_generate(args) -> int:
    from .pipeline import generate_dataset

    keys = list(cfgmod.BLEND_KEYS) + ["input_dir", "output_dir", "workers", "split", "min_pixels"]
    values = _settings(args, keys)
    manifest = generate_dataset(cfgmod.run_config(values))
    out = Path(values["output_dir"])
    if not args.no_figures and manifest["splits"]:
        from .plotting import plot_manifest

        plot_manifest(manifest, out / "manifest_counts.png")
    w = csv.writer(sys.stdout)
    w.writerow(["split", "samples", "source_images", "destroyed", "major-damage", "minor-damage", "skipped", "failed"])
    failed = 0
    for name, s in manifest["splits"].items():
        pc = s["per_class"]
        w.writerow([name, s["sample_count"], s["source_image_count"], pc["destroyed"], pc["major-damage"],
                    pc["minor-damage"], len(s["skipped"]), len(s["failed"])])
        failed += len(s["failed"])
    return 1 if failed else 0


def cmd_blend_one(args) -> int:
    from .pipeline import ingest_scene
    from .poisson import blend, make_blend_region

    values = _settings(args, cfgmod.BLEND_KEYS)
    bcfg = cfgmod.blend_config(values)
    scene = ingest_scene(args.pre, args.post, args.labels)
    poly = scene.annotation.get(args.uid)
    h, w = scene.pre_image.shape[:2]
    region = make_blend_region(poly, w, h, bcfg.dilation_px)
    composite, report = blend(scene.pre_image, scene.post_image, region, bcfg)
    write_image(args.out, composite)
    print(json.dumps({
        "uid": args.uid,
        "label": poly.label.subtype,
        "interior_count": region.interior_count,
        "iterations": report.iterations,
        "relative_residual": report.relative_residual,
        "converged": report.converged,
        "out": str(args.out),
    }))
    return 0 if report.converged else 1


def cmd_score(args) -> int:
    from .pipeline import score_run
    from .report import write_report

    values = _settings(args, list(cfgmod.METRIC_KEYS) + ["pred_dir", "gt_dir", "report"])
    for key in ("pred_dir", "gt_dir", "report"):
        if key not in values:
            raise XfbdError(f"--{key.replace('_', '-')} is required")
    total, scenes, errors = score_run(values["pred_dir"], values["gt_dir"], cfgmod.metric_config(values))
    write_report(values["report"], total, scenes, errors, figures=not args.no_figures)
    row = total.flat_row()
    w = csv.writer(sys.stdout)
    w.writerow(["metric", "value"])
    for k, v in row.items():
        if k != "scene_id":
            w.writerow([k, f"{v:.6f}"])
    return 1 if errors else 0


def cmd_chip(args) -> int:
    if args.scene:
        stem = str(args.scene)
        pre, post, labels = Path(stem + "_pre.png"), Path(stem + "_post.png"), Path(stem + "_label.json")
    else:
        if not (args.pre and args.post and args.labels):
            raise XfbdError("give --scene or all of --pre/--post/--labels")
        pre, post, labels = args.pre, args.post, args.labels
    pre_img, post_img = read_image(pre), read_image(post)
    h, w = pre_img.shape[:2]
    ann = load_annotation(labels, width=w, height=h)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for b in ann.buildings:
        try:
            chip = extract_chip(pre_img, post_img, b, args.pad)
        except XfbdError as e:
            log.warning("%s: %s", b.uid, e)
            continue
        write_image(out / f"{b.uid}_pre.png", chip.pre_patch)
        write_image(out / f"{b.uid}_post.png", chip.post_patch)
        rows.append([b.uid, b.label.subtype, chip.pad_size, int(chip.scaled)])
    with open(out / "chips.csv", "w", newline="") as fh:
        cw = csv.writer(fh)
        cw.writerow(["uid", "label", "pad_size", "scaled"])
        cw.writerows(rows)
    print(f"{len(rows)} chips written to {out}")
    return 0


def cmd_loss_check(args) -> int:
    from .gradcheck import REL_TOL, run_suite

    results = run_suite(args.cases, args.length, args.seed)
    print(f"{'check':40s} {'cases':>5s} {'worst_err':>10s}  result")
    for r in results:
        print(f"{r.name:40s} {r.cases:5d} {r.worst_rel_err:10.2e}  {'PASS' if r.passed else 'FAIL'}")
    print(f"tolerance {REL_TOL:g}")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xfbd", description="Focused building-damage data generation and scoring")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate single-building blend samples")
    g.add_argument("--config", type=Path)
    g.add_argument("--input-dir", type=Path)
    g.add_argument("--output-dir", type=Path)
    g.add_argument("--split")
    g.add_argument("--workers", type=int)
    g.add_argument("--min-pixels", type=int)
    g.add_argument("--no-figures", action="store_true")
    _add_blend_flags(g)
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("blend-one", help="blend a single building into its pre image")
    b.add_argument("--config", type=Path)
    b.add_argument("--pre", type=Path, required=True)
    b.add_argument("--post", type=Path, required=True)
    b.add_argument("--labels", type=Path, required=True)
    b.add_argument("--uid", required=True)
    b.add_argument("--out", type=Path, required=True)
    _add_blend_flags(b)
    b.set_defaults(func=cmd_blend_one)

    s = sub.add_parser("score", help="pixel- and object-level scoring of prediction masks")
    s.add_argument("--config", type=Path)
    s.add_argument("--pred-dir", type=Path)
    s.add_argument("--gt-dir", type=Path)
    s.add_argument("--report", type=Path)
    s.add_argument("--iou", dest="iou_threshold", type=float)
    s.add_argument("--connectivity", type=int, choices=(4, 8))
    s.add_argument("--min-area", type=int)
    s.add_argument("--collapse", action="store_const", const=True)
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_score)

    c = sub.add_parser("chip", help="extract padded per-building chips")
    c.add_argument("--scene", help="sample path prefix: <scene>_pre.png, <scene>_post.png, <scene>_label.json")
    c.add_argument("--pre", type=Path)
    c.add_argument("--post", type=Path)
    c.add_argument("--labels", type=Path)
    c.add_argument("--pad", type=int, default=128)
    c.add_argument("--out", type=Path, default=Path("chips"))
    c.set_defaults(func=cmd_chip)

    lc = sub.add_parser("loss-check", help="finite-difference check of every loss gradient")
    lc.add_argument("--cases", type=int, default=100)
    lc.add_argument("--length", type=int, default=64)
    lc.add_argument("--seed", type=int, default=0)
    lc.set_defaults(func=cmd_loss_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (XfbdError, ValueError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
