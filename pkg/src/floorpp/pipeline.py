"""End-to-end wiring: preprocessing, tile inference, plan assembly, and the
flat pipeline configuration shared by the CLI commands."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import edges as edges_mod
from . import ingest, metrics, pillars, plan as plan_mod, synth, training
from .errors import ConfigError
from .nn import NetworkConfig, PillarNet
from .nn.tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Union of all stage settings, loadable from one flat JSON file.

    Precedence: built-in defaults < config file < explicit CLI flags.
    Unknown keys in the file are rejected.
    """

    # ingest
    voxel_resolution: float = 0.05
    band_bin_height: float = 0.1
    crop_margin: float = 0.05
    angle_bins: int = 180
    # pillars
    cell_size: float = 0.05
    n_bins: int = 32
    tile_size: int = 512
    tile_overlap: int = 64
    # training
    lr: float = 1e-4
    epochs: int = 55
    decay_epoch: int = 40
    decay_factor: float = 10.0
    lambda_E: float = 1.0
    lambda_loc: float = 1.0
    pos_iou: float = 0.7
    neg_iou: float = 0.3
    corner_box_side: int = 9
    neg_pos_ratio: float = 1.0
    seed: int = 0
    checkpoint_every: int = 10
    # corner selection / edge proposals
    corner_threshold: float = 0.5
    nms_radius: int = 4
    max_corners: int = 512
    axis_tol: float = 2.0
    min_edge_len: float = 4.0
    edge_accept: float = 0.5
    # plan assembly
    merge_radius: float = 0.1
    # metrics
    tolerances: tuple[float, float, float] = (0.05, 0.1, 0.2)
    metric_cell: float = 0.05
    wall_thickness: float = 0.1
    # synth
    extent: tuple[float, float] = (10.0, 8.0)
    n_rooms: tuple[int, int] = (3, 6)
    wall_noise_sigma: float = 0.01
    point_density: float = 500.0
    floor_ceiling_density: float = 100.0
    outlier_fraction: float = 0.01
    story_height: float = 3.0
    door_gap_prob: float = 0.5
    door_width: float = 0.9

    def pillar_config(self) -> pillars.PillarConfig:
        return pillars.PillarConfig(
            cell_size=self.cell_size, n_bins=self.n_bins,
            tile_size=self.tile_size, tile_overlap=self.tile_overlap)

    def train_config(self) -> training.TrainConfig:
        return training.TrainConfig(
            lr=self.lr, epochs=self.epochs, decay_epoch=self.decay_epoch,
            decay_factor=self.decay_factor, lambda_E=self.lambda_E,
            lambda_loc=self.lambda_loc, pos_iou=self.pos_iou,
            neg_iou=self.neg_iou, corner_box_side=self.corner_box_side,
            neg_pos_ratio=self.neg_pos_ratio, seed=self.seed)

    def synth_config(self) -> synth.SynthConfig:
        return synth.SynthConfig(
            seed=self.seed, extent=tuple(self.extent),
            n_rooms=tuple(self.n_rooms),
            wall_noise_sigma=self.wall_noise_sigma,
            point_density=self.point_density,
            floor_ceiling_density=self.floor_ceiling_density,
            outlier_fraction=self.outlier_fraction,
            story_height=self.story_height,
            door_gap_prob=self.door_gap_prob, door_width=self.door_width)

    def metric_config(self) -> metrics.MetricConfig:
        return metrics.MetricConfig(
            tolerances=tuple(self.tolerances),
            raster_cell=self.metric_cell, wall_thickness=self.wall_thickness)

    def validate(self) -> "PipelineConfig":
        try:
            self.pillar_config()
            self.train_config()
            self.synth_config()
            if self.voxel_resolution <= 0:
                raise ValueError("voxel_resolution must be positive")
            if not 0 < self.corner_threshold < 1:
                raise ValueError("corner_threshold must be in (0, 1)")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


_FIELD_NAMES = {f.name for f in dataclasses.fields(PipelineConfig)}
_TUPLE_FIELDS = {"tolerances": float, "extent": float, "n_rooms": int}


def load_pipeline_config(config_path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, overlaid with a flat JSON file, overlaid with CLI overrides."""
    values: dict = {}
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            try:
                file_values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{config_path}: not valid JSON: {exc}") from None
        if not isinstance(file_values, dict):
            raise ConfigError(f"{config_path}: expected a JSON object")
        unknown = set(file_values) - _FIELD_NAMES
        if unknown:
            raise ConfigError(f"{config_path}: unknown keys {sorted(unknown)}")
        values.update(file_values)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELD_NAMES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    for key, cast in _TUPLE_FIELDS.items():
        if key in values:
            values[key] = tuple(cast(v) for v in values[key])
    try:
        return PipelineConfig(**values).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def worker_count() -> int:
    """Worker-thread cap from FLOORPP_THREADS (0 = all cores, unset = 1)."""
    raw = os.environ.get("FLOORPP_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FLOORPP_THREADS={raw!r} is not an integer") from None
    if n < 0:
        raise ConfigError("FLOORPP_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def preprocess_cloud(cloud: ingest.PointCloud, config: PipelineConfig):
    """Downsample, estimate the story band, crop, and axis-align.

    Returns (aligned cloud, band, alignment transform).
    """
    cloud = ingest.voxel_downsample(cloud, config.voxel_resolution)
    band = ingest.estimate_story_band(cloud, config.band_bin_height)
    cloud = ingest.crop_to_band(cloud, band, config.crop_margin)
    aligned, transform = ingest.align_to_axes(cloud, config.angle_bins)
    return aligned, band, transform


def detect_tile(net: PillarNet, tile: pillars.Tile, config: PipelineConfig):
    """Run corner detection + edge verification on one tile.

    Returns (corner world xy in the aligned frame (N, 2), local edge index
    pairs (K, 2)).
    """
    x = pillars.tile_to_input(tile)
    fmap = net.forward_backbone(Tensor(x))
    score_map = net.corner_score_head(fmap).data[0]
    cells = edges_mod.select_corners(
        score_map, config.corner_threshold, config.nms_radius, config.max_corners)
    if not cells:
        return np.empty((0, 2)), np.empty((0, 2), dtype=np.int64)
    cell_arr = np.asarray(cells, dtype=np.int64)
    offsets = net.refine_cells(fmap, cell_arr, float(config.corner_box_side)).data
    s = tile.grid.width
    positions = np.clip(cell_arr + 0.5 + offsets, 0.0, float(s))
    proposals = edges_mod.propose_edges(
        positions, config.axis_tol, config.min_edge_len)
    verified = edges_mod.verify_edges(
        proposals, positions, fmap, net, config.edge_accept)
    world = tile.grid.origin + positions * tile.grid.cell_size
    pairs = np.array([[p.a, p.b] for p in verified], dtype=np.int64).reshape(-1, 2)
    return world, pairs


def infer_floorplan(net: PillarNet, cloud: ingest.PointCloud,
                    config: PipelineConfig) -> plan_mod.FloorPlan:
    """Full pipeline: cloud -> pillars -> corners -> edges -> assembled plan.

    The result is mapped back to the input cloud's original frame. An empty
    cloud yields an empty plan with a warning.
    """
    empty = plan_mod.FloorPlan(np.empty((0, 2)), np.empty((0, 2), np.int64))
    if cloud.is_empty:
        log.warning("empty input cloud: emitting an empty plan")
        return empty
    aligned, band, transform = preprocess_cloud(cloud, config)
    if aligned.is_empty:
        log.warning("no points left after preprocessing: emitting an empty plan")
        return empty
    grid = pillars.rasterize(aligned, band, config.pillar_config())
    tiles = pillars.tile_grid(grid, config.pillar_config())
    results = []
    for tile in tiles:
        world, pairs = detect_tile(net, tile, config)
        results.append((tile.offset, world, pairs))
    assembled = plan_mod.assemble(results, config.merge_radius)
    restored = transform.invert_xy(assembled.corners) if len(assembled.corners) \
        else assembled.corners
    return plan_mod.FloorPlan(restored, assembled.edges)


def scene_to_tiles(cloud: ingest.PointCloud, gt_plan: plan_mod.FloorPlan,
                   config: PipelineConfig):
    """Preprocess one scene into (tile input, GroundTruth) training pairs.

    GT corners are mapped through the alignment into tile-local cell units;
    a tile keeps the corners inside it and the edges with both endpoints
    inside. Tiles without corners still participate (negative-only).
    """
    aligned, band, transform = preprocess_cloud(cloud, config)
    if aligned.is_empty:
        return []
    pcfg = config.pillar_config()
    grid = pillars.rasterize(aligned, band, pcfg)
    tiles = pillars.tile_grid(grid, pcfg)
    gt_grid = (transform.apply_xy(gt_plan.corners) - grid.origin) / grid.cell_size
    out = []
    s = pcfg.tile_size
    for tile in tiles:
        local = gt_grid - np.asarray(tile.offset)
        inside = np.nonzero((local[:, 0] >= 0) & (local[:, 0] <= s)
                            & (local[:, 1] >= 0) & (local[:, 1] <= s))[0]
        remap = {int(g): k for k, g in enumerate(inside)}
        kept_edges = [
            (remap[int(i)], remap[int(j)]) for i, j in gt_plan.edges
            if int(i) in remap and int(j) in remap
        ]
        gt = training.GroundTruth(
            corners=local[inside],
            edges=np.asarray(kept_edges, dtype=np.int64).reshape(-1, 2))
        out.append((pillars.tile_to_input(tile), gt))
    return out


def load_dataset(data_dir, config: PipelineConfig):
    """Read a synth manifest directory into training tiles (scenes in order)."""
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    scenes = manifest.get("scenes", [])
    if not scenes:
        raise ConfigError(f"{manifest_path}: no scenes listed")

    def build(entry):
        cloud = ingest.load_cloud(data_dir / entry["cloud"], "xyz_ascii")
        gt = plan_mod.load_plan(data_dir / entry["plan"])
        return scene_to_tiles(cloud, gt, config)

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_scene = list(pool.map(build, scenes))
    else:
        per_scene = [build(entry) for entry in scenes]
    dataset = [pair for tiles in per_scene for pair in tiles]
    if not dataset:
        raise ConfigError(f"{data_dir}: dataset produced no tiles")
    return dataset


def train_from_directory(data_dir, checkpoint_path, config: PipelineConfig,
                         log_path=None, max_tiles: int | None = None):
    """cmd_train body: build the dataset, train, write checkpoint + JSONL log."""
    dataset = load_dataset(data_dir, config)
    if max_tiles is not None:
        dataset = dataset[:max_tiles]
    net_config = NetworkConfig(n_bins=config.n_bins,
                               refine_scale=config.corner_box_side / 2.0)
    net, history = training.train(
        dataset, config.train_config(), log_path=log_path,
        checkpoint_path=checkpoint_path,
        checkpoint_every=config.checkpoint_every, net_config=net_config)
    return net, history
