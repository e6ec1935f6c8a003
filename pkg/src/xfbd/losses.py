"""Segmentation losses with hand-derived gradients.

Every loss takes a target vector ``y`` and a prediction vector ``y_hat`` of the
same length and returns the scalar value together with ``dL/dy_hat``.
Predictions are clamped to ``[EPS_CLAMP, 1 - EPS_CLAMP]`` before any log; the
gradient is zero where the clamp is active, which is the true derivative of
the clamped function.

Interpretation choices (all documented in the README):

* soft dice is ``1 - 2 sum(y*y_hat) / sum(y + y_hat)``;
* the binary cross-entropy term is the standard summed form;
* the focal forms are evaluated per pixel and averaged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

EPS_CLAMP = 1e-7


@dataclass
class LossConfig:
    gamma: float = 2.0
    beta: float = 1.0
    lambda_contour: float = 1.0
    lambda_1: float = 1.0
    lambda_4: float = 1.0
    epsilon_dice: float = 1.0


@dataclass
class LossResult:
    value: float
    gradient: np.ndarray
    # input hit a documented degenerate case (zero denominator, log of a clamped zero)
    degenerate: bool = False

    def __add__(self, other: "LossResult") -> "LossResult":
        return LossResult(self.value + other.value, self.gradient + other.gradient, self.degenerate or other.degenerate)

    def scaled(self, k: float) -> "LossResult":
        return LossResult(k * self.value, k * self.gradient, self.degenerate)


def _inputs(y, y_hat):
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.size} targets vs {y_hat.size} predictions")
    if y.size == 0:
        raise ValueError("empty input")
    return y, y_hat


def _clamp(y_hat):
    c = np.clip(y_hat, EPS_CLAMP, 1.0 - EPS_CLAMP)
    return c, (c == y_hat)


def soft_dice(y, y_hat, cfg: LossConfig | None = None) -> LossResult:
    y, y_hat = _inputs(y, y_hat)
    s = float(y @ y_hat)
    t = float(y.sum() + y_hat.sum())
    if t == 0.0:
        log.debug("soft dice on all-zero inputs; defined as 0")
        return LossResult(0.0, np.zeros_like(y), True)
    value = 1.0 - 2.0 * s / t
    grad = -2.0 * (y * t - s) / (t * t)
    return LossResult(value, grad)


def bce(y, y_hat, cfg: LossConfig | None = None) -> LossResult:
    """Summed binary cross-entropy."""
    y, y_hat = _inputs(y, y_hat)
    p, active = _clamp(y_hat)
    value = -float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))
    grad = np.where(active, (p - y) / (p * (1.0 - p)), 0.0)
    return LossResult(value, grad)


def _focal_terms(p, gamma):
    """Per-pixel ``-(1-p)^gamma log p`` and its derivative in ``p``."""
    q = 1.0 - p
    logp = np.log(p)
    value = -(q**gamma) * logp
    if gamma == 0:
        dvdp = -1.0 / p
    else:
        dvdp = gamma * q ** (gamma - 1.0) * logp - q**gamma / p
    return value, dvdp


def focal_restated(y, y_hat, cfg: LossConfig | None = None) -> LossResult:
    """Focal term with ``p = y*y_hat + (1-y)*(1-y_hat)``, averaged over pixels."""
    cfg = cfg or LossConfig()
    y, y_hat = _inputs(y, y_hat)
    yc, active = _clamp(y_hat)
    p = y * yc + (1.0 - y) * (1.0 - yc)
    pc = np.clip(p, EPS_CLAMP, 1.0)
    value, dvdp = _focal_terms(pc, cfg.gamma)
    n = y.size
    grad = np.where(active & (pc == p), dvdp * (2.0 * y - 1.0), 0.0) / n
    return LossResult(float(value.sum() / n), grad)


def focal_4ps(y, y_hat, cfg: LossConfig | None = None) -> LossResult:
    """Soft dice plus the restated focal term."""
    return soft_dice(y, y_hat, cfg) + focal_restated(y, y_hat, cfg)


def dice_eps(y, y_hat, cfg: LossConfig | None = None) -> LossResult:
    """``1 - (sum(y*y_hat) + eps) / (sum(y^2) + sum(y_hat^2) + eps)``."""
    cfg = cfg or LossConfig()
    y, y_hat = _inputs(y, y_hat)
    eps = cfg.epsilon_dice
    num = float(y @ y_hat) + eps
    den = float(y @ y + y_hat @ y_hat) + eps
    value = 1.0 - num / den
    grad = -(y * den - num * 2.0 * y_hat) / (den * den)
    return LossResult(value, grad)


def contour(y, y_hat, cfg: LossConfig | None = None) -> LossResult:
    cfg = cfg or LossConfig()
    return bce(y, y_hat).scaled(cfg.lambda_contour) + dice_eps(y, y_hat, cfg)


def ecl(y, y_hat, cfg: LossConfig | None = None) -> LossResult:
    """Edge-constraint term ``(sum(y - y_hat))^2 / 2``."""
    y, y_hat = _inputs(y, y_hat)
    d = float(np.sum(y - y_hat))
    return LossResult(0.5 * d * d, np.full_like(y, -d))


def edge_ecl(y, y_hat, cfg: LossConfig | None = None) -> LossResult:
    cfg = cfg or LossConfig()
    return bce(y, y_hat) + ecl(y, y_hat).scaled(cfg.lambda_1)


def focal_v1(y, y_hat, cfg: LossConfig | None = None) -> LossResult:
    """Focal term with the piecewise ``h = y_hat if y == 1 else 1 - y_hat``."""
    cfg = cfg or LossConfig()
    y, y_hat = _inputs(y, y_hat)
    yc, active = _clamp(y_hat)
    pos = y == 1
    h = np.where(pos, yc, 1.0 - yc)
    hc = np.clip(h, EPS_CLAMP, 1.0)
    value, dvdh = _focal_terms(hc, cfg.gamma)
    n = y.size
    grad = np.where(active & (hc == h), dvdh * np.where(pos, 1.0, -1.0), 0.0) / n
    return LossResult(float(value.sum() / n), grad)


def focal_v2(y, y_hat, cfg: LossConfig | None = None) -> LossResult:
    """``-log(h(y, gamma*y*y_hat + beta)) / gamma`` averaged over pixels.

    Can be negative. With the default ``beta = 1`` every ``y != 1`` pixel
    evaluates ``log(1 - beta) = log 0``; the argument is clamped to
    ``EPS_CLAMP``, those pixels contribute a constant, and the result is
    flagged ``degenerate``.
    """
    cfg = cfg or LossConfig()
    if cfg.gamma == 0:
        raise ValueError("focal_v2 divides by gamma; gamma must be nonzero")
    y, y_hat = _inputs(y, y_hat)
    pos = y == 1
    z = cfg.gamma * y * y_hat + cfg.beta
    h = np.where(pos, z, 1.0 - z)
    hc = np.maximum(h, EPS_CLAMP)
    n = y.size
    value = float(np.sum(-np.log(hc)) / (cfg.gamma * n))
    # dh/dy_hat = gamma*y on the positive branch, -gamma*y elsewhere
    dh = np.where(pos, cfg.gamma * y, -cfg.gamma * y)
    grad = np.where(hc == h, -dh / (hc * cfg.gamma * n), 0.0)
    return LossResult(value, grad, bool(np.any(h <= EPS_CLAMP)))


def smooth_l1(x):
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def smooth_l1_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < 1.0, x, np.sign(x))


def localization_smooth_l1(y, y_hat, cfg: LossConfig | None = None) -> LossResult:
    """BCE plus smooth-L1 over pixels with ``y >= 1``."""
    cfg = cfg or LossConfig()
    y, y_hat = _inputs(y, y_hat)
    sel = y >= 1
    x = y - y_hat
    value = float(np.sum(np.where(sel, smooth_l1(x), 0.0)))
    grad = np.where(sel, -smooth_l1_grad(x), 0.0)
    return bce(y, y_hat) + LossResult(value, grad).scaled(cfg.lambda_4)


LOSSES = {
    "soft_dice": soft_dice,
    "focal_restated": focal_restated,
    "focal_4ps": focal_4ps,
    "bce": bce,
    "contour": contour,
    "edge_ecl": edge_ecl,
    "focal_v1": focal_v1,
    "focal_v2": focal_v2,
    "localization_smooth_l1": localization_smooth_l1,
}
