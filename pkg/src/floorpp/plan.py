"""Vector floor plans: assembly from per-tile detections, JSON interchange,
and SVG rendering.

Plan JSON schema (also the ground-truth format used by synth and metrics):
{"version": 1, "units": "m", "corners": [[x, y], ...], "edges": [[i, j], ...]}
"""

from __future__ import annotations

import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import PlanSchemaError

log = logging.getLogger(__name__)

PLAN_VERSION = 1
DEFAULT_MERGE_RADIUS = 0.1


@dataclass(frozen=True)
class FloorPlan:
    """Corner coordinates in meters plus edge index pairs (i < j, unique)."""

    corners: np.ndarray  # (N, 2) float64
    edges: np.ndarray    # (K, 2) int64

    def __post_init__(self):
        corners = np.asarray(self.corners, dtype=np.float64).reshape(-1, 2)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "corners", corners)
        object.__setattr__(self, "edges", edges)
        n = len(corners)
        for k, (i, j) in enumerate(edges):
            if not (0 <= i < n and 0 <= j < n):
                raise PlanSchemaError(f"edge {k} = ({i}, {j}) out of range for {n} corners")
            if i >= j:
                raise PlanSchemaError(f"edge {k} = ({i}, {j}) must have i < j")
        if len(edges):
            ids = edges[:, 0] * max(n, 1) + edges[:, 1]
            if len(np.unique(ids)) != len(edges):
                raise PlanSchemaError("duplicate edges")
            lengths = np.linalg.norm(corners[edges[:, 0]] - corners[edges[:, 1]], axis=1)
            if (lengths == 0).any():
                raise PlanSchemaError("zero-length edge")

    @property
    def is_empty(self) -> bool:
        return len(self.corners) == 0

    def bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        if self.is_empty:
            return None
        return self.corners.min(axis=0), self.corners.max(axis=0)


def assemble(tile_results, merge_radius: float = DEFAULT_MERGE_RADIUS) -> FloorPlan:
    """Merge per-tile (offset, world corners, edge index pairs) into one plan.

    Corners within merge_radius are merged by single-link clustering onto
    their centroid (repeated to a fixpoint so the result is idempotent);
    edges are re-indexed, self-loops dropped, duplicates collapsed.
    """
    all_corners = []
    all_edges = []
    base = 0
    for _offset, corners, edge_pairs in tile_results:
        corners = np.asarray(corners, dtype=np.float64).reshape(-1, 2)
        edge_pairs = np.asarray(edge_pairs, dtype=np.int64).reshape(-1, 2)
        all_corners.append(corners)
        if len(edge_pairs):
            all_edges.append(edge_pairs + base)
        base += len(corners)
    corners = np.concatenate(all_corners) if all_corners else np.empty((0, 2))
    edges = np.concatenate(all_edges) if all_edges else np.empty((0, 2), np.int64)

    while len(corners) > 1:
        tree = cKDTree(corners)
        pairs = tree.query_pairs(merge_radius, output_type="ndarray")
        if len(pairs) == 0:
            break
        parent = np.arange(len(corners))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, j in pairs:
            parent[find(i)] = find(j)
        roots = np.array([find(i) for i in range(len(corners))])
        _, cluster = np.unique(roots, return_inverse=True)
        n_clusters = cluster.max() + 1
        sums = np.zeros((n_clusters, 2))
        counts = np.zeros(n_clusters)
        np.add.at(sums, cluster, corners)
        np.add.at(counts, cluster, 1)
        corners = sums / counts[:, None]
        if len(edges):
            edges = cluster[edges]

    if len(edges):
        keep = edges[:, 0] != edges[:, 1]
        edges = np.sort(edges[keep], axis=1)
        edges = np.unique(edges, axis=0) if len(edges) else edges
    return FloorPlan(corners, edges)


def save_plan(plan: FloorPlan, path) -> None:
    payload = {
        "version": PLAN_VERSION,
        "units": "m",
        "corners": [[float(x), float(y)] for x, y in plan.corners],
        "edges": [[int(i), int(j)] for i, j in plan.edges],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_plan(path) -> FloorPlan:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PlanSchemaError(f"{path}: not valid JSON: {exc}") from None
    for key in ("version", "units", "corners", "edges"):
        if key not in payload:
            raise PlanSchemaError(f"{path}: missing key {key!r}")
    if payload["version"] != PLAN_VERSION:
        raise PlanSchemaError(f"{path}: unsupported version {payload['version']}")
    corners = np.asarray(payload["corners"], dtype=np.float64).reshape(-1, 2)
    edges = np.asarray(payload["edges"], dtype=np.int64).reshape(-1, 2)
    try:
        return FloorPlan(corners, edges)
    except PlanSchemaError as exc:
        raise PlanSchemaError(f"{path}: {exc}") from None


def render_svg(plan: FloorPlan, path, stroke_width: float = 0.05) -> None:
    """Write the plan as SVG 1.1: one line per edge, one circle per corner.

    The viewBox covers the plan bounds plus a 5% margin, in meters as user
    units. World y points up while SVG y points down, so y coordinates are
    reflected about the vertical center of the bounds.
    """
    if plan.is_empty:
        log.warning("rendering an empty plan")
        mins = np.zeros(2)
        maxs = np.ones(2)
    else:
        mins, maxs = plan.bounds()
        if np.all(mins == maxs):
            maxs = mins + 1.0
    margin = 0.05 * (maxs - mins)
    view = (mins[0] - margin[0], mins[1] - margin[1],
            (maxs[0] - mins[0]) + 2 * margin[0], (maxs[1] - mins[1]) + 2 * margin[1])
    flip_sum = mins[1] + maxs[1]

    svg = ET.Element("svg", {
        "xmlns": "http://www.w3.org/2000/svg",
        "version": "1.1",
        "viewBox": " ".join(_fmt(v) for v in view),
    })
    for i, j in plan.edges:
        a, b = plan.corners[i], plan.corners[j]
        ET.SubElement(svg, "line", {
            "x1": _fmt(a[0]), "y1": _fmt(flip_sum - a[1]),
            "x2": _fmt(b[0]), "y2": _fmt(flip_sum - b[1]),
            "stroke": "black", "stroke-width": _fmt(stroke_width),
            "stroke-linecap": "round",
        })
    for x, y in plan.corners:
        ET.SubElement(svg, "circle", {
            "cx": _fmt(x), "cy": _fmt(flip_sum - y),
            "r": _fmt(stroke_width * 1.5), "fill": "crimson",
        })
    ET.ElementTree(svg).write(path, encoding="unicode", xml_declaration=True)


def _fmt(v: float) -> str:
    if math.isclose(v, round(v), abs_tol=1e-12):
        return str(int(round(v)))
    return f"{v:.6g}"
