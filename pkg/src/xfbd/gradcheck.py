"""Central finite-difference checks for the analytic loss gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import LOSSES, LossConfig, bce, focal_restated, focal_v1

STEP = 1e-5
REL_TOL = 1e-5
ABS_FLOOR = 1e-8


def numeric_gradient(fn, y, y_hat, cfg=None, h: float = STEP) -> np.ndarray:
    y_hat = np.asarray(y_hat, dtype=np.float64)
    g = np.empty_like(y_hat)
    for i in range(y_hat.size):
        up, dn = y_hat.copy(), y_hat.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (fn(y, up, cfg).value - fn(y, dn, cfg).value) / (2 * h)
    return g


def relative_error(analytic, numeric, floor: float = ABS_FLOOR) -> float:
    """Worst per-entry ``|a - n| / max(|a|, |n|, floor)``."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def random_instance(rng, name: str, n: int = 64):
    """Targets and predictions kept well away from the clamp region."""
    if name == "localization_smooth_l1":
        y = rng.integers(0, 3, n).astype(np.float64)
    else:
        y = rng.integers(0, 2, n).astype(np.float64)
    y_hat = rng.uniform(0.05, 0.95, n)
    return y, y_hat


@dataclass
class CheckResult:
    name: str
    cases: int
    worst_rel_err: float
    passed: bool


def check_loss(name: str, cases: int = 100, n: int = 64, seed: int = 0, cfg=None) -> CheckResult:
    fn = LOSSES[name]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        y, y_hat = random_instance(rng, name, n)
        res = fn(y, y_hat, cfg)
        worst = max(worst, relative_error(res.gradient, numeric_gradient(fn, y, y_hat, cfg)))
    return CheckResult(name, cases, worst, worst <= REL_TOL)


def check_identities(cases: int = 100, n: int = 64, seed: int = 1) -> list[CheckResult]:
    """focal(gamma=0) == bce/n and focal_restated == focal_v1 on binary targets."""
    rng = np.random.default_rng(seed)
    worst_bce, worst_v1 = 0.0, 0.0
    g0 = LossConfig(gamma=0.0)
    for _ in range(cases):
        y = rng.integers(0, 2, n).astype(np.float64)
        y_hat = rng.uniform(0.0, 1.0, n)
        a, b = focal_restated(y, y_hat, g0).value, bce(y, y_hat).value / n
        worst_bce = max(worst_bce, abs(a - b) / max(abs(b), ABS_FLOOR))
        r, v = focal_restated(y, y_hat), focal_v1(y, y_hat)
        worst_v1 = max(worst_v1, abs(r.value - v.value), float(np.max(np.abs(r.gradient - v.gradient))))
    return [
        CheckResult("identity focal(gamma=0) == bce/n", cases, worst_bce, worst_bce <= 1e-12),
        CheckResult("identity focal_restated == focal_v1", cases, worst_v1, worst_v1 <= 1e-12),
    ]


def run_suite(cases: int = 100, n: int = 64, seed: int = 0) -> list[CheckResult]:
    results = [check_loss(name, cases, n, seed + k) for k, name in enumerate(LOSSES)]
    return results + check_identities(cases, n, seed + len(LOSSES))
