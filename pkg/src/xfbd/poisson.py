"""Gradient-domain compositing over a building mask.

The unknowns are the pixels of a region ``Omega``. For each interior pixel
``p`` and channel::

    4 f_p - sum_{q in N_p & Omega} f_q
        = sum_{q in N_p & dOmega} target_q + sum_{q in N_p} (source_p - source_q)

i.e. the composite keeps the source gradients inside ``Omega`` and agrees
with the target on the boundary. The resulting 5-point Laplacian is SPD and
is solved with conjugate gradients on a cropped window around the region.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .errors import DimensionMismatch, EmptyPolygon, RegionTouchesBorder
from .raster import BuildingPolygon, polygon_footprint, to_float

log = logging.getLogger(__name__)

_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass
class BlendConfig:
    dilation_px: int = 2
    cg_tolerance: float = 1e-6
    cg_max_iters: int = 10_000
    window_margin_px: int = 8


@dataclass
class BlendRegion:
    mask: np.ndarray
    # inclusive (x0, y0, x1, y1); None for an empty region
    bbox: tuple[int, int, int, int] | None
    interior_count: int

    @classmethod
    def from_mask(cls, mask) -> "BlendRegion":
        mask = np.asarray(mask, dtype=bool)
        n = int(mask.sum())
        if n == 0:
            return cls(mask, None, 0)
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        return cls(mask, (int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])), n)


@dataclass
class PoissonSystem:
    index_map: np.ndarray  # (H, W) int, -1 outside Omega
    rows: np.ndarray
    cols: np.ndarray
    matrix: sp.csr_matrix
    rhs: np.ndarray  # (N, C)


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    converged: bool


def make_blend_region(poly: BuildingPolygon, width: int, height: int, dilation: int = 2) -> BlendRegion:
    """Rasterize ``poly`` and grow it by ``dilation`` pixels (8-neighborhood).

    The grown region is clipped so it stays one pixel inside the frame. A
    footprint that itself reaches the frame edge cannot get a Dirichlet
    boundary and raises ``RegionTouchesBorder``.
    """
    fp = polygon_footprint(poly.vertices, width, height)
    if not fp.any():
        raise EmptyPolygon(f"building {poly.uid} rasterizes to zero pixels")
    if fp[0].any() or fp[-1].any() or fp[:, 0].any() or fp[:, -1].any():
        raise RegionTouchesBorder(f"building {poly.uid} touches the image border")
    region = fp
    if dilation > 0:
        region = ndimage.binary_dilation(fp, structure=np.ones((3, 3), bool), iterations=int(dilation))
    region[0, :] = region[-1, :] = False
    region[:, 0] = region[:, -1] = False
    return BlendRegion.from_mask(region)


def _check_region(mask: np.ndarray) -> None:
    if mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
        raise RegionTouchesBorder("region has pixels on the frame border")


def assemble(target: np.ndarray, source: np.ndarray, region: BlendRegion) -> PoissonSystem:
    """Build the sparse Laplacian and per-channel right-hand sides.

    ``target`` and ``source`` are float arrays shaped ``(H, W)`` or ``(H, W, C)``.
    """
    if target.shape != source.shape:
        raise DimensionMismatch(f"target {target.shape} vs source {source.shape}")
    if target.shape[:2] != region.mask.shape:
        raise DimensionMismatch(f"image {target.shape[:2]} vs region {region.mask.shape}")
    _check_region(region.mask)
    tgt = np.asarray(target, dtype=np.float64)
    src = np.asarray(source, dtype=np.float64)
    if tgt.ndim == 2:
        tgt, src = tgt[:, :, None], src[:, :, None]

    rows, cols = np.nonzero(region.mask)
    n = rows.size
    index_map = np.full(region.mask.shape, -1, dtype=np.int64)
    index_map[rows, cols] = np.arange(n)

    rhs = np.zeros((n, tgt.shape[2]))
    i_idx = [np.arange(n)]
    j_idx = [np.arange(n)]
    vals = [np.full(n, 4.0)]
    for dr, dc in _OFFSETS:
        nr, nc = rows + dr, cols + dc
        nb = index_map[nr, nc]
        inside = nb >= 0
        i_idx.append(np.flatnonzero(inside))
        j_idx.append(nb[inside])
        vals.append(np.full(int(inside.sum()), -1.0))
        rhs[~inside] += tgt[nr[~inside], nc[~inside]]
        rhs += src[rows, cols] - src[nr, nc]
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(i_idx), np.concatenate(j_idx))), shape=(n, n)
    )
    return PoissonSystem(index_map, rows, cols, matrix, rhs)


def conjugate_gradient(A, b: np.ndarray, tol: float = 1e-6, max_iter: int = 10_000):
    """Solve ``A x = b`` for SPD ``A`` from a zero initial guess.

    Stops when the true relative residual ``||b - Ax|| / ||b||`` is at most
    ``tol``. On non-convergence the last iterate is returned with
    ``converged=False``.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, SolveReport(0, 0.0, True)
    r = b.copy()
    p = r.copy()
    rs = r @ r
    it = 0
    while it < max_iter:
        it += 1
        Ap = A @ p
        alpha = rs / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = r @ r
        if np.sqrt(rs_new) <= tol * bnorm:
            # recursive residual drifts; confirm against the true one
            r = b - A @ x
            rs_new = r @ r
            if np.sqrt(rs_new) <= tol * bnorm:
                return x, SolveReport(it, float(np.sqrt(rs_new) / bnorm), True)
            p = r.copy()
            rs = rs_new
            continue
        p = r + (rs_new / rs) * p
        rs = rs_new
    res = float(np.linalg.norm(b - A @ x) / bnorm)
    log.warning("CG stopped after %d iterations at relative residual %.3g", it, res)
    return x, SolveReport(it, res, res <= tol)


def solve(system: PoissonSystem, tolerance: float = 1e-6, max_iterations: int = 10_000):
    """Solve every channel independently; returns ``(solution (N, C), SolveReport)``.

    The merged report takes the worst channel.
    """
    out = np.zeros_like(system.rhs)
    iters, worst, ok = 0, 0.0, True
    for c in range(system.rhs.shape[1]):
        out[:, c], rep = conjugate_gradient(system.matrix, system.rhs[:, c], tolerance, max_iterations)
        iters = max(iters, rep.iterations)
        worst = max(worst, rep.relative_residual)
        ok &= rep.converged
    return out, SolveReport(iters, worst, ok)


def _window(region: BlendRegion, shape, margin: int):
    margin = max(int(margin), 1)
    x0, y0, x1, y1 = region.bbox
    h, w = shape
    return slice(max(y0 - margin, 0), min(y1 + margin + 1, h)), slice(max(x0 - margin, 0), min(x1 + margin + 1, w))


def solve_region(target: np.ndarray, source: np.ndarray, region: BlendRegion, config: BlendConfig | None = None):
    """Float-valued blend: ``target`` with ``Omega`` replaced by the unclamped solution.

    Inputs are float arrays (any scale); the solve runs on a window of the
    region's bbox plus ``window_margin_px``.
    """
    config = config or BlendConfig()
    if target.shape != source.shape:
        raise DimensionMismatch(f"target {target.shape} vs source {source.shape}")
    if target.shape[:2] != region.mask.shape:
        raise DimensionMismatch(f"image {target.shape[:2]} vs region {region.mask.shape}")
    out = np.array(target, dtype=np.float64, copy=True)
    if region.interior_count == 0:
        return out, SolveReport(0, 0.0, True)
    _check_region(region.mask)
    ys, xs = _window(region, region.mask.shape, config.window_margin_px)
    sub = BlendRegion.from_mask(region.mask[ys, xs])
    system = assemble(out[ys, xs], np.asarray(source, dtype=np.float64)[ys, xs], sub)
    sol, report = solve(system, config.cg_tolerance, config.cg_max_iters)
    win = out[ys, xs]
    if win.ndim == 2:
        win[system.rows, system.cols] = sol[:, 0]
    else:
        win[system.rows, system.cols] = sol
    return out, report


def blend(target: np.ndarray, source: np.ndarray, region: BlendRegion, config: BlendConfig | None = None):
    """Composite ``source`` into ``target`` over ``region``.

    Both images are ``uint8``. Pixels outside the region are copied from
    ``target`` unchanged; solved pixels are clamped to [0, 255] and rounded
    half-to-even. Returns ``(composite, SolveReport)``.
    """
    if target.shape != source.shape:
        raise DimensionMismatch(f"target {target.shape} vs source {source.shape}")
    solved, report = solve_region(to_float(target), to_float(source), region, config)
    composite = np.array(target, copy=True)
    if region.interior_count:
        vals = np.rint(np.clip(solved[region.mask] * 255.0, 0.0, 255.0))
        composite[region.mask] = vals.astype(np.uint8)
    return composite, report


def discrete_laplacian(img: np.ndarray) -> np.ndarray:
    """4-neighbor Laplacian ``4 f_p - sum f_q``; zero on the one-pixel frame."""
    f = np.asarray(img, dtype=np.float64)
    out = np.zeros_like(f)
    c = f[1:-1, 1:-1]
    out[1:-1, 1:-1] = 4 * c - f[:-2, 1:-1] - f[2:, 1:-1] - f[1:-1, :-2] - f[1:-1, 2:]
    return out
