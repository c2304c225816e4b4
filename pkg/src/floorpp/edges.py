"""Corner selection and Manhattan edge proposals.

After axis alignment, true wall edges are horizontal or vertical, so each
detected corner only needs to look for its nearest neighbor in the four
axis directions instead of the full O(n^2) connection. Proposals are then
scored by the network's edge head and thresholded.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .nn import PillarNet
from .nn.tensor import Tensor

DEFAULT_SCORE_THRESHOLD = 0.5
DEFAULT_NMS_RADIUS = 4
DEFAULT_MAX_CORNERS = 512
DEFAULT_AXIS_TOL = 2.0
DEFAULT_MIN_EDGE_LEN = 4.0
DEFAULT_EDGE_ACCEPT = 0.5


@dataclass(frozen=True)
class CornerPrediction:
    """A detected corner: grid cell, score, sub-cell offset, refined position."""

    cell: tuple[int, int]        # (i, j)
    score: float
    offset: tuple[float, float]  # (dx, dy), cell units
    position: np.ndarray         # (x, y) continuous grid coords
    world_position: np.ndarray | None = None


@dataclass(frozen=True)
class EdgeProposal:
    """Candidate axis-aligned wall segment between two corner indices (a < b)."""

    a: int
    b: int
    orientation: str  # "horizontal" | "vertical"
    length: float     # along-axis distance, cells
    score: float | None = None


def select_corners(score_map: np.ndarray, threshold: float = DEFAULT_SCORE_THRESHOLD,
                   nms_radius: int = DEFAULT_NMS_RADIUS,
                   max_corners: int = DEFAULT_MAX_CORNERS) -> list[tuple[int, int]]:
    """Greedy NMS over a (S, S) score map indexed [row=j, col=i].

    Cells scoring >= threshold are kept in descending score order (ties
    broken by row-major position); keeping a cell suppresses everything
    within Chebyshev distance nms_radius. Returns cells as (i, j).
    """
    scores = np.asarray(score_map)
    if scores.ndim == 3:
        scores = scores[0]
    rows, cols = np.nonzero(scores >= threshold)
    if len(rows) == 0:
        return []
    vals = scores[rows, cols]
    order = np.lexsort((cols, rows, -vals))
    suppressed = np.zeros(scores.shape, dtype=bool)
    kept: list[tuple[int, int]] = []
    h, w = scores.shape
    for t in order:
        j, i = int(rows[t]), int(cols[t])
        if suppressed[j, i]:
            continue
        kept.append((i, j))
        if len(kept) >= max_corners:
            break
        suppressed[max(0, j - nms_radius):min(h, j + nms_radius + 1),
                   max(0, i - nms_radius):min(w, i + nms_radius + 1)] = True
    return kept


def propose_edges(corners, axis_tol: float = DEFAULT_AXIS_TOL,
                  min_edge_len: float = DEFAULT_MIN_EDGE_LEN,
                  max_edge_len: float | None = None) -> list[EdgeProposal]:
    """Connect each corner to its nearest neighbor in the four axis directions.

    A neighbor qualifies when its orthogonal coordinate differs by at most
    axis_tol and its along-axis distance is in (min_edge_len, max_edge_len].
    Proposals are deduplicated as unordered pairs, so the output is at most
    2 * len(corners).
    """
    positions = _corner_positions(corners)
    n = len(positions)
    if max_edge_len is None:
        max_edge_len = np.inf
    found: dict[tuple[int, int], EdgeProposal] = {}
    for idx in range(n):
        for axis, orientation in ((0, "horizontal"), (1, "vertical")):
            orth = 1 - axis
            d_along = positions[:, axis] - positions[idx, axis]
            d_orth = np.abs(positions[:, orth] - positions[idx, orth])
            near_line = d_orth <= axis_tol
            for sign in (1.0, -1.0):
                dist = d_along * sign
                ok = near_line & (dist > min_edge_len) & (dist <= max_edge_len)
                if not ok.any():
                    continue
                cand = np.flatnonzero(ok)
                best = int(cand[np.argmin(dist[cand])])
                key = (min(idx, best), max(idx, best))
                if key not in found:
                    found[key] = EdgeProposal(
                        a=key[0], b=key[1], orientation=orientation,
                        length=float(dist[best]))
    return [found[k] for k in sorted(found)]


def verify_edges(proposals, corners, fmap: Tensor, net: PillarNet,
                 accept_threshold: float = DEFAULT_EDGE_ACCEPT) -> list[EdgeProposal]:
    """Score each proposal with the edge head; keep those >= accept_threshold."""
    positions = _corner_positions(corners)
    kept = []
    for prop in proposals:
        score = net.edge_score(fmap, positions[prop.a], positions[prop.b]).item()
        if score >= accept_threshold:
            kept.append(replace(prop, score=score))
    return kept


def _corner_positions(corners) -> np.ndarray:
    if isinstance(corners, np.ndarray):
        return corners.reshape(-1, 2).astype(np.float64)
    if corners and isinstance(corners[0], CornerPrediction):
        return np.array([c.position for c in corners], dtype=np.float64).reshape(-1, 2)
    return np.asarray(list(corners), dtype=np.float64).reshape(-1, 2)
