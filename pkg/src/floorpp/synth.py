"""Synthetic Manhattan building stories for training and evaluation.

A layout is grown by recursive axis-aligned binary splits of the bounding
rectangle; walls are the boundary plus the split segments, subdivided at
junctions into the plan's edges. The point cloud samples wall rectangles,
floor and ceiling planes, adds Gaussian surface noise, optional door gaps,
and a fraction of vertical outliers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import PointCloud, StoryBand
from .plan import FloorPlan, save_plan

MIN_ROOM_SIDE = 1.5
DOOR_CORNER_MARGIN = 0.3
# split positions snap to this lattice so junctions are either well
# separated or exactly coincident (never a near-duplicate corner pair)
SPLIT_SNAP = 0.5


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    extent: tuple[float, float] = (10.0, 8.0)
    n_rooms: tuple[int, int] = (3, 6)
    wall_noise_sigma: float = 0.01
    point_density: float = 500.0          # points per m^2 of wall
    floor_ceiling_density: float = 100.0  # points per m^2 of slab
    outlier_fraction: float = 0.01
    story_height: float = 3.0
    door_gap_prob: float = 0.5
    door_width: float = 0.9

    def __post_init__(self):
        if self.point_density <= 0 or self.floor_ceiling_density <= 0:
            raise ValueError("densities must be positive")
        if not 0 <= self.outlier_fraction < 1:
            raise ValueError("outlier_fraction must be in [0, 1)")
        if self.story_height <= 0:
            raise ValueError("story_height must be positive")


@dataclass(frozen=True)
class Scene:
    gt_plan: FloorPlan
    cloud: PointCloud
    band: StoryBand


def generate_layout(config: SynthConfig, rng: np.random.Generator) -> FloorPlan:
    """Recursive binary splits until the room count lands in config.n_rooms."""
    width, depth = config.extent
    lo, hi = config.n_rooms
    if lo < 1 or hi < lo:
        raise ValueError(f"invalid n_rooms range {config.n_rooms}")
    target = int(rng.integers(lo, hi + 1))
    rooms = [(0.0, 0.0, width, depth)]  # (x0, y0, x1, y1)
    splits: list[tuple[int, float, float, float]] = []  # (axis, pos, lo, hi)
    while len(rooms) < target:
        candidates = [k for k, r in enumerate(rooms)
                      if max(r[2] - r[0], r[3] - r[1]) >= 2 * MIN_ROOM_SIDE]
        if not candidates:
            raise ValueError(
                f"extent {config.extent} too small for {target} rooms "
                f"(min room side {MIN_ROOM_SIDE} m)")
        areas = np.array([(rooms[k][2] - rooms[k][0]) * (rooms[k][3] - rooms[k][1])
                          for k in candidates])
        k = candidates[int(np.argmax(areas))]
        x0, y0, x1, y1 = rooms.pop(k)
        axis = 0 if (x1 - x0) >= (y1 - y0) else 1
        lo_c, hi_c = (x0, x1) if axis == 0 else (y0, y1)
        pos = _snapped_split(lo_c, hi_c, rng)
        if axis == 0:
            splits.append((0, pos, y0, y1))
            rooms.extend([(x0, y0, pos, y1), (pos, y0, x1, y1)])
        else:
            splits.append((1, pos, x0, x1))
            rooms.extend([(x0, y0, x1, pos), (x0, pos, x1, y1)])
    return _walls_to_plan(width, depth, splits)


def _snapped_split(lo: float, hi: float, rng) -> float:
    pos = float(rng.uniform(lo + MIN_ROOM_SIDE, hi - MIN_ROOM_SIDE))
    snapped = round(pos / SPLIT_SNAP) * SPLIT_SNAP
    if snapped < lo + MIN_ROOM_SIDE or snapped > hi - MIN_ROOM_SIDE:
        snapped = pos  # snap would violate the minimum side; keep the raw draw
    return snapped


def _walls_to_plan(width: float, depth: float, splits) -> FloorPlan:
    """Convert boundary + split segments into corners and subdivided edges."""
    # vertical walls: (x, y_lo, y_hi); horizontal walls: (y, x_lo, x_hi)
    vertical = [(0.0, 0.0, depth), (width, 0.0, depth)]
    horizontal = [(0.0, 0.0, width), (depth, 0.0, width)]
    for axis, pos, a, b in splits:
        if axis == 0:
            vertical.append((pos, a, b))
        else:
            horizontal.append((pos, a, b))
    vertical = _merge_collinear(vertical)
    horizontal = _merge_collinear(horizontal)

    corners: dict[tuple[float, float], int] = {}

    def corner_id(x, y):
        key = (round(x, 9), round(y, 9))
        if key not in corners:
            corners[key] = len(corners)
        return corners[key]

    edges = set()
    for x, y_lo, y_hi in vertical:
        cuts = {y_lo, y_hi}
        for y, x_lo, x_hi in horizontal:
            if x_lo - 1e-9 <= x <= x_hi + 1e-9 and y_lo - 1e-9 <= y <= y_hi + 1e-9:
                cuts.add(y)
        levels = sorted(cuts)
        for a, b in zip(levels[:-1], levels[1:]):
            edges.add(tuple(sorted((corner_id(x, a), corner_id(x, b)))))
    for y, x_lo, x_hi in horizontal:
        cuts = {x_lo, x_hi}
        for x, y_lo, y_hi in vertical:
            if y_lo - 1e-9 <= y <= y_hi + 1e-9 and x_lo - 1e-9 <= x <= x_hi + 1e-9:
                cuts.add(x)
        levels = sorted(cuts)
        for a, b in zip(levels[:-1], levels[1:]):
            edges.add(tuple(sorted((corner_id(a, y), corner_id(b, y)))))

    pts = np.array(list(corners.keys()), dtype=np.float64)
    return FloorPlan(pts, np.array(sorted(edges), dtype=np.int64))


def _merge_collinear(walls):
    """Merge touching/overlapping intervals of walls sharing a coordinate."""
    by_pos: dict[float, list[tuple[float, float]]] = {}
    for pos, a, b in walls:
        by_pos.setdefault(round(pos, 9), []).append((min(a, b), max(a, b)))
    merged = []
    for pos, spans in by_pos.items():
        spans.sort()
        cur_a, cur_b = spans[0]
        for a, b in spans[1:]:
            if a <= cur_b + 1e-9:
                cur_b = max(cur_b, b)
            else:
                merged.append((pos, cur_a, cur_b))
                cur_a, cur_b = a, b
        merged.append((pos, cur_a, cur_b))
    return merged


def sample_cloud(plan: FloorPlan, config: SynthConfig,
                 rng: np.random.Generator) -> tuple[PointCloud, StoryBand]:
    """Sample walls, floor and ceiling; apply noise, door gaps, outliers.

    Door gaps never come within DOOR_CORNER_MARGIN of an edge endpoint so
    the corner evidence survives. Outliers keep their xy but get a z drawn
    uniformly from [-2, story_height + 2].
    """
    height = config.story_height
    width, depth = config.extent
    chunks = []
    interior = _interior_edges(plan, config.extent)
    for k, (i, j) in enumerate(plan.edges):
        a, b = plan.corners[i], plan.corners[j]
        length = float(np.linalg.norm(b - a))
        n = rng.poisson(length * height * config.point_density)
        if n == 0:
            continue
        t = rng.uniform(0.0, 1.0, n)
        z = rng.uniform(0.0, height, n)
        door = None
        if k in interior and length >= config.door_width + 2 * DOOR_CORNER_MARGIN \
                and rng.uniform() < config.door_gap_prob:
            start = rng.uniform(DOOR_CORNER_MARGIN,
                                length - config.door_width - DOOR_CORNER_MARGIN)
            door = (start / length, (start + config.door_width) / length)
        if door is not None:
            keep = (t < door[0]) | (t > door[1])
            t, z = t[keep], z[keep]
        pts = a[None, :] + t[:, None] * (b - a)[None, :]
        chunks.append(np.column_stack([pts[:, 0], pts[:, 1], z]))

    slab_area = width * depth
    for z_level in (0.0, height):
        n = rng.poisson(slab_area * config.floor_ceiling_density)
        xy = rng.uniform([0.0, 0.0], [width, depth], size=(n, 2))
        chunks.append(np.column_stack([xy, np.full(n, z_level)]))

    points = np.concatenate(chunks) if chunks else np.empty((0, 3))
    if config.wall_noise_sigma > 0 and len(points):
        points = points + rng.normal(0.0, config.wall_noise_sigma, points.shape)
    if config.outlier_fraction > 0 and len(points):
        n_out = int(round(config.outlier_fraction * len(points)))
        if n_out:
            idx = rng.choice(len(points), size=n_out, replace=False)
            points[idx, 2] = rng.uniform(-2.0, height + 2.0, n_out)
    return PointCloud(points), StoryBand(0.0, height)


def _interior_edges(plan: FloorPlan, extent) -> set[int]:
    width, depth = extent
    interior = set()
    for k, (i, j) in enumerate(plan.edges):
        a, b = plan.corners[i], plan.corners[j]
        if abs(a[0] - b[0]) < 1e-9:  # vertical
            if not (abs(a[0]) < 1e-9 or abs(a[0] - width) < 1e-9):
                interior.add(k)
        else:
            if not (abs(a[1]) < 1e-9 or abs(a[1] - depth) < 1e-9):
                interior.add(k)
    return interior


def generate_scene(config: SynthConfig, rng: np.random.Generator) -> Scene:
    plan = generate_layout(config, rng)
    cloud, band = sample_cloud(plan, config, rng)
    return Scene(plan, cloud, band)


def generate_dataset(config: SynthConfig, n_scenes: int, out_dir) -> Path:
    """Write n_scenes (cloud, plan) pairs plus a manifest; returns manifest path.

    Per-scene RNG streams derive from (seed, scene index), so outputs are
    byte-identical for identical configs regardless of generation order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_scenes):
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(i,)))
        scene = generate_scene(config, rng)
        cloud_name = f"scene_{i:03d}.xyz"
        plan_name = f"scene_{i:03d}.plan.json"
        _write_xyz(scene.cloud, out / cloud_name)
        save_plan(scene.gt_plan, out / plan_name)
        entries.append({"cloud": cloud_name, "plan": plan_name})
    manifest = {
        "scenes": entries,
        "config": {
            "seed": config.seed,
            "extent": list(config.extent),
            "n_rooms": list(config.n_rooms),
            "wall_noise_sigma": config.wall_noise_sigma,
            "point_density": config.point_density,
            "floor_ceiling_density": config.floor_ceiling_density,
            "outlier_fraction": config.outlier_fraction,
            "story_height": config.story_height,
            "door_gap_prob": config.door_gap_prob,
            "door_width": config.door_width,
        },
    }
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest_path


def _write_xyz(cloud: PointCloud, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for x, y, z in cloud.points:
            fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")
