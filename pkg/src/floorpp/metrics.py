"""Plan evaluation: corner precision/recall at distance tiers, rasterized
wall IoU, and Betti error (connected components and independent cycles)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .plan import FloorPlan

DEFAULT_TOLERANCES = (0.05, 0.1, 0.2)
DEFAULT_RASTER_CELL = 0.05
DEFAULT_WALL_THICKNESS = 0.1


@dataclass(frozen=True)
class MetricConfig:
    tolerances: tuple[float, float, float] = DEFAULT_TOLERANCES
    raster_cell: float = DEFAULT_RASTER_CELL
    wall_thickness: float = DEFAULT_WALL_THICKNESS


@dataclass(frozen=True)
class EvalReport:
    tolerances: tuple[float, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    iou: float
    betti_error: float

    def to_dict(self) -> dict:
        return {
            "tolerances_m": list(self.tolerances),
            "precision": list(self.precision),
            "recall": list(self.recall),
            "iou": self.iou,
            "betti_error": self.betti_error,
        }


def corner_pr(pred: FloorPlan, gt: FloorPlan, tolerances=DEFAULT_TOLERANCES):
    """Greedy one-to-one corner matching per tolerance tier.

    Candidate (pred, gt) pairs are matched in ascending distance order; a
    pair matches when both sides are still free and the distance is within
    the tier. Returns (precision per tier, recall per tier); empty pred or
    gt contributes zeros.
    """
    tolerances = tuple(tolerances)
    if any(b < a for a, b in zip(tolerances, tolerances[1:])):
        raise ValueError("tolerances must be ascending")
    n_pred, n_gt = len(pred.corners), len(gt.corners)
    if n_pred == 0 or n_gt == 0:
        return (0.0,) * len(tolerances), (0.0,) * len(tolerances)
    d = np.linalg.norm(pred.corners[:, None, :] - gt.corners[None, :, :], axis=2)
    precision, recall = [], []
    for tol in tolerances:
        pi, gi = np.nonzero(d <= tol)
        order = np.lexsort((gi, pi, d[pi, gi]))
        pred_used = np.zeros(n_pred, dtype=bool)
        gt_used = np.zeros(n_gt, dtype=bool)
        matches = 0
        for k in order:
            p, g = pi[k], gi[k]
            if pred_used[p] or gt_used[g]:
                continue
            pred_used[p] = True
            gt_used[g] = True
            matches += 1
        precision.append(matches / n_pred)
        recall.append(matches / n_gt)
    return tuple(precision), tuple(recall)


def _wall_grid_geometry(pred: FloorPlan, gt: FloorPlan, cell: float, thickness: float):
    """Shared raster frame over the union of both plans' bounds."""
    pts = [p.corners for p in (pred, gt) if not p.is_empty]
    if not pts:
        return None
    allpts = np.concatenate(pts)
    mins = allpts.min(axis=0) - thickness
    maxs = allpts.max(axis=0) + thickness
    nx = max(1, int(math.ceil((maxs[0] - mins[0]) / cell)))
    ny = max(1, int(math.ceil((maxs[1] - mins[1]) / cell)))
    return mins, nx, ny


def rasterize_walls(plan: FloorPlan, origin, nx: int, ny: int, cell: float,
                    thickness: float) -> np.ndarray:
    """Boolean (nx, ny) raster: pixel center within thickness/2 of any edge."""
    wall = np.zeros((nx, ny), dtype=bool)
    if len(plan.edges) == 0:
        return wall
    cx = origin[0] + (np.arange(nx) + 0.5) * cell
    cy = origin[1] + (np.arange(ny) + 0.5) * cell
    half_sq = (thickness / 2.0) ** 2
    for i, j in plan.edges:
        a, b = plan.corners[i], plan.corners[j]
        lo = np.minimum(a, b) - thickness
        hi = np.maximum(a, b) + thickness
        xi = np.nonzero((cx >= lo[0]) & (cx <= hi[0]))[0]
        yi = np.nonzero((cy >= lo[1]) & (cy <= hi[1]))[0]
        if len(xi) == 0 or len(yi) == 0:
            continue
        px = cx[xi][:, None]
        py = cy[yi][None, :]
        wall[np.ix_(xi, yi)] |= _segment_dist_sq(px, py, a, b) <= half_sq
    return wall


def _segment_dist_sq(px, py, a, b):
    """Squared distance from points (px, py) to segment a-b. Broadcasts."""
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    denom = dx * dx + dy * dy
    t = ((px - a[0]) * dx + (py - a[1]) * dy) / denom
    t = np.clip(t, 0.0, 1.0)
    qx = a[0] + t * dx
    qy = a[1] + t * dy
    return (px - qx) ** 2 + (py - qy) ** 2


def wall_iou(pred: FloorPlan, gt: FloorPlan, cell: float = DEFAULT_RASTER_CELL,
             thickness: float = DEFAULT_WALL_THICKNESS) -> float:
    """IoU of the two plans' wall rasters on a shared grid; 1.0 if both empty."""
    if cell <= 0 or thickness <= 0:
        raise ValueError("cell and thickness must be positive")
    geom = _wall_grid_geometry(pred, gt, cell, thickness)
    if geom is None:
        return 1.0
    origin, nx, ny = geom
    p = rasterize_walls(pred, origin, nx, ny, cell, thickness)
    g = rasterize_walls(gt, origin, nx, ny, cell, thickness)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def betti_numbers(plan: FloorPlan) -> tuple[int, int]:
    """(b0, b1) of the plan graph: components, and E - V + b0 independent cycles."""
    n = len(plan.corners)
    if n == 0:
        return 0, 0
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in plan.edges:
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[ri] = rj
    b0 = len({find(i) for i in range(n)})
    b1 = len(plan.edges) - n + b0
    return b0, b1


def betti_error(pred: FloorPlan, gt: FloorPlan) -> float:
    """|b0_pred - b0_gt| + |b1_pred - b1_gt|."""
    b0p, b1p = betti_numbers(pred)
    b0g, b1g = betti_numbers(gt)
    return float(abs(b0p - b0g) + abs(b1p - b1g))


def evaluate(pred: FloorPlan, gt: FloorPlan,
             config: MetricConfig = MetricConfig()) -> EvalReport:
    precision, recall = corner_pr(pred, gt, config.tolerances)
    return EvalReport(
        tolerances=tuple(config.tolerances),
        precision=precision,
        recall=recall,
        iou=wall_iou(pred, gt, config.raster_cell, config.wall_thickness),
        betti_error=betti_error(pred, gt),
    )


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
