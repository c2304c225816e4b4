"""Point pillar rasterization and tiling.

A pillar is the vertical prism above one 2D grid cell, featurized as a
boolean occupancy vector over equal-height vertical bins. Large grids are
cut into fixed-size, optionally overlapping tiles for the network.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .ingest import PointCloud, StoryBand

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PillarConfig:
    cell_size: float = 0.05
    n_bins: int = 32
    tile_size: int = 512
    tile_overlap: int = 64

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if not 0 <= self.tile_overlap < self.tile_size:
            raise ValueError("tile_overlap must be in [0, tile_size)")


@dataclass(frozen=True)
class PillarGrid:
    """Boolean occupancy of shape (width, height, n_bins).

    Bit (i, j, k) is TRUE iff at least one point fell in cell (i, j) with z
    in bin k. `origin` is the world xy of cell (0, 0)'s lower corner; cell
    (i, j) spans [origin + (i, j)*cell, origin + (i+1, j+1)*cell).
    """

    occupancy: np.ndarray
    origin: np.ndarray
    cell_size: float

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 3:
            raise ValueError("occupancy must be 3-dimensional")
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))

    @property
    def width(self) -> int:
        return self.occupancy.shape[0]

    @property
    def height(self) -> int:
        return self.occupancy.shape[1]

    @property
    def n_bins(self) -> int:
        return self.occupancy.shape[2]


@dataclass(frozen=True)
class Tile:
    """A tile_size x tile_size crop of a parent grid, zero-padded at borders."""

    grid: PillarGrid
    offset: tuple[int, int]


def rasterize(cloud: PointCloud, band: StoryBand, config: PillarConfig,
              origin: np.ndarray | None = None) -> PillarGrid:
    """Scatter an aligned, cropped cloud into a pillar occupancy grid.

    Bin k spans [z_floor + k*h, z_floor + (k+1)*h) with
    h = (z_ceiling - z_floor) / n_bins; points exactly at z_ceiling land in
    the last bin. Points outside the band (e.g. retained by a crop margin)
    set no bit. With the default origin (the cloud's xy minimum), grid
    dimensions are ceil(extent / cell_size) per axis.
    """
    if cloud.is_empty:
        log.warning("rasterizing an empty cloud: returning a 0x0 grid")
        return PillarGrid(np.zeros((0, 0, config.n_bins), dtype=bool),
                          np.zeros(2), config.cell_size)
    mins, maxs = cloud.bounds
    if origin is None:
        origin = mins[:2]
    origin = np.asarray(origin, dtype=np.float64)
    extent = maxs[:2] - origin
    width = max(1, int(math.ceil(extent[0] / config.cell_size)))
    height = max(1, int(math.ceil(extent[1] / config.cell_size)))
    pts = cloud.points
    occ = kernels.rasterize_occupancy(
        pts[:, 0], pts[:, 1], pts[:, 2],
        float(origin[0]), float(origin[1]), config.cell_size,
        band.z_floor, band.z_ceiling, width, height, config.n_bins)
    return PillarGrid(occ, origin, config.cell_size)


def tile_grid(grid: PillarGrid, config: PillarConfig) -> list[Tile]:
    """Cut the grid into tiles at stride tile_size - tile_overlap.

    The union of tiles covers the whole grid; tiles overhanging the border
    are zero-padded. Each tile records its (i, j) cell offset in the parent.
    """
    size = config.tile_size
    stride = size - config.tile_overlap
    offsets_x = list(range(0, max(grid.width - config.tile_overlap, 1), stride))
    offsets_y = list(range(0, max(grid.height - config.tile_overlap, 1), stride))
    tiles = []
    for ox in offsets_x:
        for oy in offsets_y:
            block = np.zeros((size, size, grid.n_bins), dtype=bool)
            sx = min(size, max(grid.width - ox, 0))
            sy = min(size, max(grid.height - oy, 0))
            if sx > 0 and sy > 0:
                block[:sx, :sy] = grid.occupancy[ox:ox + sx, oy:oy + sy]
            sub = PillarGrid(block,
                             grid.origin + np.array([ox, oy]) * grid.cell_size,
                             grid.cell_size)
            tiles.append(Tile(sub, (ox, oy)))
    return tiles


def grid_to_image(grid: PillarGrid) -> np.ndarray:
    """Per-cell fraction of TRUE bins, shape (width, height), values in [0, 1]."""
    if grid.occupancy.size == 0:
        return np.zeros((grid.width, grid.height))
    return grid.occupancy.mean(axis=2)


def tile_to_input(tile: Tile) -> np.ndarray:
    """Network input tensor (n_bins, S, S) float32 with rows = y, cols = x."""
    return np.ascontiguousarray(
        tile.grid.occupancy.transpose(2, 1, 0).astype(np.float32))


def write_pgm(image: np.ndarray, path) -> None:
    """Write a (width, height) image in [0, 1] as ASCII PGM (P2, 0-255).

    Rows are emitted top-down, i.e. decreasing world y, so walls appear
    upright in image viewers.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        img = np.zeros((1, 1))
    levels = np.clip(np.rint(img * 255), 0, 255).astype(np.int64)
    rows = levels.T[::-1]  # (height, width), top row = max y
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n{rows.shape[1]} {rows.shape[0]}\n255\n")
        for row in rows:
            fh.write(" ".join(str(v) for v in row))
            fh.write("\n")
