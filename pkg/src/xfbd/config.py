"""Flat key/value config files (TOML syntax) and their mapping onto run settings.

Every CLI flag has a config key of the same name with dashes turned into
underscores; values given on the command line win.
"""

from __future__ import annotations

from pathlib import Path

import tomli

from .errors import MissingFile
from .metrics import MetricConfig
from .pipeline import CandidatePolicy, RunConfig
from .poisson import BlendConfig
from .raster import DamageClass

BLEND_KEYS = ("dilation_px", "cg_tolerance", "cg_max_iters", "window_margin_px")
METRIC_KEYS = ("iou_threshold", "connectivity", "min_area", "collapse")
RUN_KEYS = (
    "input_dir", "output_dir", "splits", "split", "images_subdir", "labels_subdir",
    "secondary_subdir", "workers", "eligible_classes", "exclude_uids", "min_pixels",
)
# CLI spellings that differ from the dataclass field
ALIASES = {"iou": "iou_threshold"}
KNOWN = set(BLEND_KEYS) | set(METRIC_KEYS) | set(RUN_KEYS) | {"pred_dir", "gt_dir", "report", "figures"}


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with open(path, "rb") as fh:
        data = tomli.load(fh)
    data = {ALIASES.get(k, k): v for k, v in data.items()}
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ValueError(f"{path}: config is flat; tables not allowed ({', '.join(nested)})")
    unknown = set(data) - KNOWN
    if unknown:
        raise ValueError(f"{path}: unknown config keys: {', '.join(sorted(unknown))}")
    return data


def merge(config: dict, overrides: dict) -> dict:
    out = dict(config)
    out.update({ALIASES.get(k, k): v for k, v in overrides.items() if v is not None})
    return out


def blend_config(values: dict) -> BlendConfig:
    return BlendConfig(**{k: values[k] for k in BLEND_KEYS if k in values})


def metric_config(values: dict) -> MetricConfig:
    return MetricConfig(**{k: values[k] for k in METRIC_KEYS if k in values})


def run_config(values: dict) -> RunConfig:
    for key in ("input_dir", "output_dir"):
        if key not in values:
            raise ValueError(f"missing required setting {key!r}")
    policy = CandidatePolicy()
    if "eligible_classes" in values:
        policy.eligible_classes = tuple(DamageClass.from_subtype(s) for s in values["eligible_classes"])
    if "exclude_uids" in values:
        policy.exclude_uids = frozenset(values["exclude_uids"])
    if "min_pixels" in values:
        policy.min_pixels = int(values["min_pixels"])
    kw = {k: values[k] for k in ("splits", "split", "images_subdir", "labels_subdir", "secondary_subdir", "workers") if k in values}
    return RunConfig(
        input_dir=Path(values["input_dir"]),
        output_dir=Path(values["output_dir"]),
        blend=blend_config(values),
        policy=policy,
        **kw,
    )
