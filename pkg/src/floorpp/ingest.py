"""Point cloud loading and preprocessing.

Loads xyz/ply ASCII clouds, voxel-downsamples them, estimates the story's
floor/ceiling band from the z histogram, crops to that band, and rotates the
dominant wall directions onto the x/y axes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import CloudFormatError

log = logging.getLogger(__name__)

# points used for the direction histogram; larger clouds are strided down
ALIGN_SAMPLE_CAP = 20000
ALIGN_NEIGHBORS = 8
# 2D cell size for grouping points into vertical columns before the
# direction analysis, and the minimum number of dense columns required to
# trust the column filter
ALIGN_GRID = 0.05
ALIGN_MIN_COLUMNS = 50
DEFAULT_ANGLE_BINS = 180
DEFAULT_BIN_HEIGHT = 0.1
DEFAULT_CROP_MARGIN = 0.05


@dataclass(frozen=True)
class PointCloud:
    """Immutable set of 3D points in meters, stored as an (N, 3) float64 array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        object.__setattr__(self, "points", pts)

    @property
    def is_empty(self) -> bool:
        return len(self.points) == 0

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(min_corner, max_corner) of the axis-aligned bounding box, or None."""
        if self.is_empty:
            return None
        return self.points.min(axis=0), self.points.max(axis=0)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class StoryBand:
    """Vertical interval between a story's floor and ceiling elevations."""

    z_floor: float
    z_ceiling: float

    def __post_init__(self):
        if not self.z_floor < self.z_ceiling:
            raise ValueError(
                f"z_floor ({self.z_floor}) must be below z_ceiling ({self.z_ceiling})")


@dataclass(frozen=True)
class AlignmentTransform:
    """Rotation about the vertical axis plus a horizontal translation.

    `rotation_angle` is in [-pi/4, pi/4): wall alignment is only defined
    modulo 90 degrees.
    """

    rotation_angle: float
    translation: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if not (-math.pi / 4 <= self.rotation_angle < math.pi / 4):
            raise ValueError(f"rotation_angle {self.rotation_angle} outside [-pi/4, pi/4)")
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64))

    def _rot(self, angle: float) -> np.ndarray:
        c, s = math.cos(angle), math.sin(angle)
        return np.array([[c, -s], [s, c]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Rotate then translate the xy components; z passes through."""
        out = np.asarray(points, dtype=np.float64).copy()
        out[:, :2] = out[:, :2] @ self._rot(self.rotation_angle).T + self.translation
        return out

    def invert(self, points: np.ndarray) -> np.ndarray:
        out = np.asarray(points, dtype=np.float64).copy()
        out[:, :2] = (out[:, :2] - self.translation) @ self._rot(-self.rotation_angle).T
        return out

    def apply_xy(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return xy @ self._rot(self.rotation_angle).T + self.translation

    def invert_xy(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return (xy - self.translation) @ self._rot(-self.rotation_angle).T


def load_cloud(path, format: str = "xyz_ascii") -> PointCloud:
    """Load a point cloud from an ASCII file.

    Formats: "xyz_ascii" (one `x y z` line per point, extra fields ignored,
    `#` comments skipped) and "ply_ascii" (header-declared vertex element
    with float x/y/z properties). Non-finite points are dropped with a
    warning; malformed lines raise CloudFormatError with the line number.
    """
    if format == "xyz_ascii":
        points = _parse_xyz(path)
    elif format == "ply_ascii":
        points = _parse_ply(path)
    else:
        raise ValueError(f"unknown format {format!r}")

    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    finite = np.isfinite(points).all(axis=1)
    if not finite.all():
        log.warning("%s: dropped %d non-finite point(s)", path, (~finite).sum())
        points = points[finite]
    if len(points) == 0:
        log.warning("%s: empty input", path)
    return PointCloud(points)


def _parse_xyz(path):
    points = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split()
            if len(fields) < 3:
                raise CloudFormatError(f"{path}: line {lineno}: expected 3 coordinates")
            try:
                points.append([float(fields[0]), float(fields[1]), float(fields[2])])
            except ValueError:
                raise CloudFormatError(
                    f"{path}: line {lineno}: cannot parse coordinates") from None
    return points


def _parse_ply(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError(f"{path}: line 1: missing 'ply' magic")

    n_vertices = None
    properties = []  # property names of the vertex element, in order
    in_vertex_element = False
    fmt_seen = False
    body_start = None
    elements = []  # (name, count) in declaration order
    for idx, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if line.startswith("comment") or not line:
            continue
        if line.startswith("format"):
            if "ascii" not in line:
                raise CloudFormatError(f"{path}: line {idx}: only ascii PLY is supported")
            fmt_seen = True
        elif line.startswith("element"):
            parts = line.split()
            if len(parts) != 3:
                raise CloudFormatError(f"{path}: line {idx}: bad element declaration")
            name, count = parts[1], int(parts[2])
            elements.append((name, count))
            in_vertex_element = name == "vertex"
            if in_vertex_element:
                n_vertices = count
        elif line.startswith("property"):
            if in_vertex_element:
                parts = line.split()
                if parts[1] == "list":
                    raise CloudFormatError(
                        f"{path}: line {idx}: list property in vertex element")
                properties.append(parts[-1])
        elif line == "end_header":
            body_start = idx  # lines[] index of the first body line is idx (0-based: idx)
            break
    else:
        raise CloudFormatError(f"{path}: missing end_header")

    if not fmt_seen:
        raise CloudFormatError(f"{path}: missing format declaration")
    if n_vertices is None:
        raise CloudFormatError(f"{path}: no vertex element declared")
    try:
        cols = [properties.index(axis) for axis in ("x", "y", "z")]
    except ValueError as exc:
        raise CloudFormatError(f"{path}: vertex element lacks x/y/z: {exc}") from None

    # vertex rows start after end_header, preceded by any earlier elements' rows
    offset = 0
    for name, count in elements:
        if name == "vertex":
            break
        offset += count
    first = body_start + offset
    rows = lines[first:first + n_vertices]
    if len(rows) < n_vertices:
        raise CloudFormatError(
            f"{path}: declared {n_vertices} vertices but found {len(rows)} rows")
    points = []
    for off, row in enumerate(rows):
        fields = row.split()
        if len(fields) < len(properties):
            raise CloudFormatError(
                f"{path}: line {first + off + 1}: expected {len(properties)} fields")
        try:
            points.append([float(fields[c]) for c in cols])
        except ValueError:
            raise CloudFormatError(
                f"{path}: line {first + off + 1}: cannot parse coordinates") from None
    return points


def voxel_downsample(cloud: PointCloud, resolution: float) -> PointCloud:
    """Replace all points in each occupied voxel by their centroid."""
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    if cloud.is_empty:
        return cloud
    pts = cloud.points
    keys = np.floor(pts / resolution).astype(np.int64)
    keys -= keys.min(axis=0)
    spans = keys.max(axis=0).astype(np.int64) + 1
    flat = (keys[:, 0] * spans[1] + keys[:, 1]) * spans[2] + keys[:, 2]
    _, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, pts)
    return PointCloud(sums / counts[:, None])


def estimate_story_band(cloud: PointCloud, bin_height: float = DEFAULT_BIN_HEIGHT) -> StoryBand:
    """Estimate floor and ceiling elevations from z-histogram peaks.

    Floors and ceilings are the densest horizontal planes, so the band is
    read off as the highest-count bin below and above the vertical midpoint.
    The midpoint is taken between the 5th and 95th z percentiles so that a
    small fraction of far outliers cannot drag it (or the ceiling peak)
    away from the story.
    """
    if cloud.is_empty:
        raise ValueError("cannot estimate story band of an empty cloud")
    if bin_height <= 0:
        raise ValueError(f"bin_height must be positive, got {bin_height}")
    z = cloud.points[:, 2]
    z_min, z_max = z.min(), z.max()
    if z_max - z_min < bin_height:
        raise ValueError("degenerate z-range: all points at one elevation")
    n_bins = int(math.ceil((z_max - z_min) / bin_height))
    counts, edges = np.histogram(z, bins=n_bins, range=(z_min, z_min + n_bins * bin_height))
    centers = (edges[:-1] + edges[1:]) / 2.0

    lo, hi = np.percentile(z, [5.0, 95.0])
    mid = (lo + hi) / 2.0
    lower = centers < mid
    upper = ~lower
    if not lower.any() or not upper.any() or counts[lower].max() == 0 or counts[upper].max() == 0:
        raise ValueError("degenerate z distribution: cannot split floor from ceiling")
    z_floor = float(centers[lower][np.argmax(counts[lower])])
    z_ceiling = float(centers[upper][np.argmax(counts[upper])])
    return StoryBand(z_floor, z_ceiling)


def crop_to_band(cloud: PointCloud, band: StoryBand,
                 margin: float = DEFAULT_CROP_MARGIN) -> PointCloud:
    """Keep points with z in [z_floor - margin, z_ceiling + margin], order preserved."""
    if cloud.is_empty:
        return cloud
    z = cloud.points[:, 2]
    keep = (z >= band.z_floor - margin) & (z <= band.z_ceiling + margin)
    return PointCloud(cloud.points[keep])


def align_to_axes(cloud: PointCloud, angle_bins: int = DEFAULT_ANGLE_BINS,
                  ) -> tuple[PointCloud, AlignmentTransform]:
    """Rotate the dominant wall direction onto the axes and move the xy min to (0, 0).

    The dominant direction is the peak of a histogram (mod 90 degrees) of
    local neighbor-pair segment directions in the 2D projection, refined by
    averaging the angles near the peak. A flat histogram (no dominant
    direction) yields the identity rotation with a warning.
    """
    if cloud.is_empty:
        raise ValueError("cannot align an empty cloud")
    if angle_bins < 90:
        raise ValueError(f"angle_bins must be >= 90, got {angle_bins}")

    # iterate: the column grid aliases oblique walls slightly, but the bias
    # vanishes once the estimate has rotated the walls near the axes
    rotation = 0.0
    for iteration in range(3):
        c, s = math.cos(rotation), math.sin(rotation)
        rot = np.array([[c, -s], [s, c]])
        trial = cloud.points.copy()
        trial[:, :2] = trial[:, :2] @ rot.T
        angles = _neighbor_pair_angles(trial)
        if not angles.size:
            if iteration == 0:
                log.warning("not enough distinct points for alignment; "
                            "keeping orientation")
            break
        dominant = _dominant_angle(angles, angle_bins)
        if dominant is None:
            if iteration == 0:
                log.warning("no dominant wall direction; keeping original orientation")
            break
        delta = dominant if dominant < math.pi / 4 else dominant - math.pi / 2
        rotation -= delta
        if abs(delta) < math.radians(0.02):
            break
    if rotation < -math.pi / 4:
        rotation += math.pi / 2
    elif rotation >= math.pi / 4:
        rotation -= math.pi / 2

    c, s = math.cos(rotation), math.sin(rotation)
    rot = np.array([[c, -s], [s, c]])
    rotated_xy = cloud.points[:, :2] @ rot.T
    translation = -rotated_xy.min(axis=0)
    transform = AlignmentTransform(rotation, translation)
    aligned = cloud.points.copy()
    aligned[:, :2] = rotated_xy + translation
    return PointCloud(aligned), transform


def _neighbor_pair_angles(points: np.ndarray) -> np.ndarray:
    """Directions (mod pi/2, in [0, pi/2)) of k-NN segments between wall columns.

    Points are first grouped into 2D grid columns; a raw 2D projection would
    stack each wall column into a noise-sized blob whose neighbor-pair
    directions are meaningless. Columns holding many points (walls) are kept
    and represented by their centroid; if too few dense columns exist, all
    column centroids are used.
    """
    xy = _column_centroids(points)
    if len(xy) > ALIGN_SAMPLE_CAP:
        stride = int(math.ceil(len(xy) / ALIGN_SAMPLE_CAP))
        xy = xy[::stride]
    if len(xy) < 2:
        return np.empty(0)
    k = min(ALIGN_NEIGHBORS + 1, len(xy))
    tree = cKDTree(xy)
    _, idx = tree.query(xy, k=k)
    src = np.repeat(np.arange(len(xy)), k - 1)
    dst = idx[:, 1:].ravel()
    seg = xy[dst] - xy[src]
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    good = lengths > 1e-12
    ang = np.arctan2(seg[good, 1], seg[good, 0])
    return np.mod(ang, math.pi / 2)


def _column_centroids(points: np.ndarray) -> np.ndarray:
    """Centroids of dense vertical columns on an ALIGN_GRID 2D lattice."""
    xy = points[:, :2]
    keys = np.floor(xy / ALIGN_GRID).astype(np.int64)
    keys -= keys.min(axis=0)
    flat = keys[:, 0] * (keys[:, 1].max() + 1) + keys[:, 1]
    _, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    sums = np.zeros((len(counts), 2))
    np.add.at(sums, inverse, xy)
    centroids = sums / counts[:, None]
    dense = counts >= max(4, 0.25 * counts.max())
    if dense.sum() >= ALIGN_MIN_COLUMNS:
        return centroids[dense]
    return centroids


def _dominant_angle(angles: np.ndarray, angle_bins: int) -> float | None:
    """Histogram peak over [0, pi/2), refined by a local circular mean."""
    period = math.pi / 2
    counts, edges = np.histogram(angles, bins=angle_bins, range=(0.0, period))
    peak = int(np.argmax(counts))
    if counts[peak] < 2.0 * counts.mean():
        return None
    bin_width = period / angle_bins
    center = edges[peak] + bin_width / 2
    # wrap deviations into [-period/2, period/2) around the peak center
    dev = np.mod(angles - center + period / 2, period) - period / 2
    near = np.abs(dev) <= 4.0 * bin_width
    if near.any():
        center += float(dev[near].mean())
    return float(np.mod(center, period))
