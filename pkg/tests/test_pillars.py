import logging
import math

import numpy as np
import pytest

from floorpp.ingest import PointCloud, StoryBand
from floorpp.pillars import (PillarConfig, PillarGrid, grid_to_image, rasterize,
                             tile_grid, tile_to_input, write_pgm)


def brute_force_rasterize(points, origin, cell, band, width, height, n_bins):
    """Independent per-point bit setter used as the rasterization oracle."""
    occ = np.zeros((width, height, n_bins), dtype=bool)
    bin_h = (band.z_ceiling - band.z_floor) / n_bins
    for x, y, z in points:
        if z < band.z_floor or z > band.z_ceiling:
            continue
        if x < origin[0] or x > origin[0] + width * cell:
            continue
        if y < origin[1] or y > origin[1] + height * cell:
            continue
        i = min(int(math.floor((x - origin[0]) / cell)), width - 1)
        j = min(int(math.floor((y - origin[1]) / cell)), height - 1)
        k = min(int(math.floor((z - band.z_floor) / bin_h)), n_bins - 1)
        occ[i, j, k] = True
    return occ


@pytest.fixture
def config():
    return PillarConfig(cell_size=0.05, n_bins=32, tile_size=512, tile_overlap=64)


class TestRasterize:
    def test_single_point_bit(self, config):
        cloud = PointCloud(np.array([[0.07, 0.12, 1.5]]))
        grid = rasterize(cloud, StoryBand(0.0, 3.0), config, origin=(0.0, 0.0))
        assert grid.occupancy.shape == (2, 3, 32)
        expected = np.zeros((2, 3, 32), dtype=bool)
        expected[1, 2, 16] = True
        assert np.array_equal(grid.occupancy, expected)

    def test_empty_cloud(self, config, caplog):
        with caplog.at_level(logging.WARNING):
            grid = rasterize(PointCloud(np.empty((0, 3))), StoryBand(0, 3), config)
        assert grid.width == 0 and grid.height == 0

    def test_wall_band_vs_oracle(self, config, rng):
        t = rng.uniform(0, 4.0, 20_000)
        pts = np.column_stack([t, rng.normal(1.0, 0.02, len(t)),
                               rng.uniform(0, 3, len(t))])
        cloud = PointCloud(pts)
        band = StoryBand(0.0, 3.0)
        grid = rasterize(cloud, band, config)
        oracle = brute_force_rasterize(pts, cloud.bounds[0][:2], 0.05, band,
                                       grid.width, grid.height, 32)
        assert np.array_equal(grid.occupancy, oracle)
        occupied = np.nonzero(grid.occupancy.any(axis=2))
        widths = np.bincount(occupied[0])  # cells per column along the wall
        assert widths.max() <= 4  # narrow band: +-3 sigma of noise is 4 cells

    def test_points_at_ceiling_land_in_last_bin(self, config):
        cloud = PointCloud(np.array([[0.01, 0.01, 3.0], [0.02, 0.02, 0.0]]))
        grid = rasterize(cloud, StoryBand(0.0, 3.0), config)
        assert grid.occupancy[0, 0, 31] and grid.occupancy[0, 0, 0]

    def test_out_of_band_points_skipped(self, config):
        cloud = PointCloud(np.array([[0.01, 0.01, 3.04], [0.01, 0.01, 1.0]]))
        grid = rasterize(cloud, StoryBand(0.0, 3.0), config)
        assert grid.occupancy.sum() == 1

    def test_permutation_invariance(self, config, rng):
        pts = rng.uniform(0, 2, (5000, 3))
        cloud = PointCloud(pts)
        band = StoryBand(0.0, 2.0)
        g1 = rasterize(cloud, band, config, origin=(0.0, 0.0))
        g2 = rasterize(PointCloud(pts[rng.permutation(len(pts))]), band, config,
                       origin=(0.0, 0.0))
        assert np.array_equal(g1.occupancy, g2.occupancy)

    def test_duplication_invariance(self, config, rng):
        pts = rng.uniform(0, 1, (500, 3))
        band = StoryBand(0.0, 1.0)
        g1 = rasterize(PointCloud(pts), band, config, origin=(0.0, 0.0))
        g2 = rasterize(PointCloud(np.concatenate([pts, pts[:100]])), band, config,
                       origin=(0.0, 0.0))
        assert np.array_equal(g1.occupancy, g2.occupancy)

    def test_true_bits_bounded_by_points(self, config, rng):
        pts = rng.uniform(0, 3, (700, 3))
        grid = rasterize(PointCloud(pts), StoryBand(0, 3), config)
        assert grid.occupancy.sum() <= len(pts)


class TestTileGrid:
    def make_grid(self, w, h, n_bins=32, seed=0):
        occ = np.random.default_rng(seed).random((w, h, n_bins)) < 0.05
        return PillarGrid(occ, np.zeros(2), 0.05)

    def test_single_tile(self, config):
        tiles = tile_grid(self.make_grid(512, 512), config)
        assert len(tiles) == 1
        assert tiles[0].offset == (0, 0)

    def test_stride_offsets(self, config):
        tiles = tile_grid(self.make_grid(600, 512), config)
        assert [t.offset for t in tiles] == [(0, 0), (448, 0)]

    def test_small_grid_zero_padded(self, config):
        grid = self.make_grid(100, 100)
        tiles = tile_grid(grid, config)
        assert len(tiles) == 1
        tile = tiles[0]
        assert tile.grid.occupancy.shape == (512, 512, 32)
        assert np.array_equal(tile.grid.occupancy[:100, :100], grid.occupancy)
        assert not tile.grid.occupancy[100:].any()
        assert not tile.grid.occupancy[:, 100:].any()

    def test_stitching_reproduces_parent(self):
        config = PillarConfig(cell_size=0.05, n_bins=8, tile_size=64, tile_overlap=16)
        grid = self.make_grid(150, 90, n_bins=8)
        tiles = tile_grid(grid, config)
        rebuilt = np.zeros_like(grid.occupancy)
        for tile in tiles:
            ox, oy = tile.offset
            sx = min(64, grid.width - ox)
            sy = min(64, grid.height - oy)
            rebuilt[ox:ox + sx, oy:oy + sy] |= tile.grid.occupancy[:sx, :sy]
        assert np.array_equal(rebuilt, grid.occupancy)
        # overlapping regions agree between tiles
        for t1 in tiles:
            for t2 in tiles:
                if t1.offset >= t2.offset:
                    continue
                x0 = max(t1.offset[0], t2.offset[0])
                x1 = min(t1.offset[0] + 64, t2.offset[0] + 64, grid.width)
                y0 = max(t1.offset[1], t2.offset[1])
                y1 = min(t1.offset[1] + 64, t2.offset[1] + 64, grid.height)
                if x0 >= x1 or y0 >= y1:
                    continue
                a = t1.grid.occupancy[x0 - t1.offset[0]:x1 - t1.offset[0],
                                      y0 - t1.offset[1]:y1 - t1.offset[1]]
                b = t2.grid.occupancy[x0 - t2.offset[0]:x1 - t2.offset[0],
                                      y0 - t2.offset[1]:y1 - t2.offset[1]]
                assert np.array_equal(a, b)

    def test_union_covers_grid(self):
        config = PillarConfig(cell_size=0.05, n_bins=4, tile_size=128, tile_overlap=32)
        grid = self.make_grid(500, 300, n_bins=4)
        tiles = tile_grid(grid, config)
        covered = np.zeros((grid.width, grid.height), dtype=bool)
        for tile in tiles:
            ox, oy = tile.offset
            covered[ox:ox + 128, oy:oy + 128] = True
        assert covered.all()


class TestGridToImage:
    def test_all_false(self):
        grid = PillarGrid(np.zeros((4, 4, 32), bool), np.zeros(2), 0.05)
        assert np.array_equal(grid_to_image(grid), np.zeros((4, 4)))

    def test_full_column(self):
        occ = np.zeros((2, 2, 32), bool)
        occ[0, 0, :] = True
        img = grid_to_image(PillarGrid(occ, np.zeros(2), 0.05))
        assert img[0, 0] == 1.0

    def test_quarter_fraction(self):
        occ = np.zeros((1, 1, 32), bool)
        occ[0, 0, :8] = True
        img = grid_to_image(PillarGrid(occ, np.zeros(2), 0.05))
        assert img[0, 0] == 0.25


class TestTileToInput:
    def test_orientation_and_dtype(self):
        occ = np.zeros((8, 8, 4), bool)
        occ[3, 5, 2] = True  # cell (i=3, j=5), bin 2
        from floorpp.pillars import Tile
        tile = Tile(PillarGrid(occ, np.zeros(2), 0.05), (0, 0))
        x = tile_to_input(tile)
        assert x.shape == (4, 8, 8)
        assert x.dtype == np.float32
        assert x[2, 5, 3] == 1.0  # channel=bin, row=j, col=i
        assert x.sum() == 1.0


class TestWritePgm:
    def test_p2_conformance(self, tmp_path):
        img = np.array([[0.0, 0.5], [1.0, 0.25]])  # (width=2, height=2)
        path = tmp_path / "out.pgm"
        write_pgm(img, path)
        tokens = path.read_text().split()
        assert tokens[0] == "P2"
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        assert (w, h, maxval) == (2, 2, 255)
        values = [int(t) for t in tokens[4:]]
        assert len(values) == 4
        assert max(values) <= 255 and min(values) >= 0
        # top row of the file is max-y row of the image
        assert values[:2] == [128, 64]
        assert values[2:] == [0, 255]

    def test_empty_image(self, tmp_path):
        path = tmp_path / "empty.pgm"
        write_pgm(np.zeros((0, 0)), path)
        tokens = path.read_text().split()
        assert tokens[:4] == ["P2", "1", "1", "255"]


class TestPillarConfig:
    def test_invariants(self):
        with pytest.raises(ValueError):
            PillarConfig(cell_size=0.0)
        with pytest.raises(ValueError):
            PillarConfig(n_bins=0)
        with pytest.raises(ValueError):
            PillarConfig(tile_overlap=512, tile_size=512)
