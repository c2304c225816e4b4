"""Ground-truth assignment, losses, and the training loop.

Cells are matched to ground-truth corners by the IoU of equal axis-aligned
boxes (side = corner_box_side) centered on the cell center and the corner:
max IoU > pos_iou makes a positive sample, < neg_iou a negative candidate,
anything between is ignored. Negatives are subsampled to keep a balanced
ratio. The composite loss is
l_total = l_cls + lambda_loc * l_loc + lambda_E * l_e.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import edges as edges_mod
from . import nn
from .errors import TrainingDiverged
from .nn import tensor as T
from .nn.tensor import Tensor

# negatives sampled on tiles without any ground-truth corner, so empty
# scenes still teach the score head
ZERO_CORNER_NEGATIVES = 32
EDGE_JITTER_CELLS = 0.25
EDGE_MATCH_TOL = 2.0


@dataclass(frozen=True)
class TrainConfig:
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

    def __post_init__(self):
        if not 0 <= self.neg_iou < self.pos_iou <= 1:
            raise ValueError("need 0 <= neg_iou < pos_iou <= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.decay_epoch > self.epochs:
            raise ValueError("decay_epoch must be <= epochs")

    def lr_at(self, epoch: int) -> float:
        return self.lr / self.decay_factor if epoch >= self.decay_epoch else self.lr


# residual off-axis drift allowed on a "Manhattan" edge, in cells; absorbs
# the small rotation error left by axis alignment
MANHATTAN_TOL = 2.0


@dataclass(frozen=True)
class GroundTruth:
    """Corner positions (continuous cell units) and axis-aligned edge index pairs."""

    corners: np.ndarray  # (M, 2) float, (x, y)
    edges: np.ndarray    # (K, 2) int

    def __post_init__(self):
        corners = np.asarray(self.corners, dtype=np.float64).reshape(-1, 2)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        for a, b in edges:
            dx = abs(corners[a, 0] - corners[b, 0])
            dy = abs(corners[a, 1] - corners[b, 1])
            if max(dx, dy) <= 0 or min(dx, dy) > MANHATTAN_TOL:
                raise ValueError(f"edge {a}-{b} is not axis-aligned (dx={dx}, dy={dy})")
        object.__setattr__(self, "corners", corners)
        object.__setattr__(self, "edges", edges)


@dataclass(frozen=True)
class SampleAssignment:
    positive_cells: np.ndarray  # (P, 2) int (i, j)
    positive_gt: np.ndarray     # (P,) int index of matched GT corner
    negative_cells: np.ndarray  # (N, 2) int

    @property
    def n_pos(self) -> int:
        return len(self.positive_cells)


@dataclass(frozen=True)
class LossBreakdown:
    l_total: float
    l_c: float
    l_cls: float
    l_loc: float
    l_e: float

    def check(self, lambda_loc: float, lambda_E: float, rel_tol: float = 1e-6):
        expect = self.l_cls + lambda_loc * self.l_loc + lambda_E * self.l_e
        if abs(self.l_total - expect) > rel_tol * max(1.0, abs(expect)):
            raise AssertionError(f"loss breakdown mismatch: {self.l_total} vs {expect}")


def box_iou(a, b) -> float:
    """IoU of two axis-aligned boxes given as (xmin, ymin, xmax, ymax)."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    if area_a <= 0 or area_b <= 0:
        raise ValueError("boxes must have positive area")
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = max(0.0, iw) * max(0.0, ih)
    return inter / (area_a + area_b - inter)


def assign_corner_samples(gt: GroundTruth, tile_size: int, config: TrainConfig,
                          rng: np.random.Generator) -> SampleAssignment:
    """Classify grid cells against GT corners by box IoU and balance negatives.

    Every cell's max IoU over corner boxes decides its role: > pos_iou makes
    it positive (matched to the argmax corner), < neg_iou puts it in the
    negative pool, in between it is ignored. Negatives are drawn uniformly
    without replacement down to ceil(neg_pos_ratio * positives).
    """
    side = float(config.corner_box_side)
    s = tile_size
    max_iou = np.zeros((s, s))
    match = np.full((s, s), -1, dtype=np.int64)
    reach = int(math.ceil(side)) + 1
    for gi, (gx, gy) in enumerate(gt.corners):
        i0 = max(0, int(math.floor(gx - 0.5)) - reach)
        i1 = min(s - 1, int(math.ceil(gx - 0.5)) + reach)
        j0 = max(0, int(math.floor(gy - 0.5)) - reach)
        j1 = min(s - 1, int(math.ceil(gy - 0.5)) + reach)
        if i0 > i1 or j0 > j1:
            continue
        di = np.abs(np.arange(i0, i1 + 1) + 0.5 - gx)[:, None]
        dj = np.abs(np.arange(j0, j1 + 1) + 0.5 - gy)[None, :]
        inter = np.maximum(0.0, side - di) * np.maximum(0.0, side - dj)
        iou = inter / (2.0 * side * side - inter)
        window = max_iou[i0:i1 + 1, j0:j1 + 1]
        better = iou > window
        window[better] = iou[better]
        match[i0:i1 + 1, j0:j1 + 1][better] = gi

    pos_mask = max_iou > config.pos_iou
    neg_mask = max_iou < config.neg_iou
    pos_i, pos_j = np.nonzero(pos_mask)
    positive_cells = np.stack([pos_i, pos_j], axis=1)
    positive_gt = match[pos_i, pos_j]

    pool = np.flatnonzero(neg_mask)
    if len(positive_cells):
        want = int(math.ceil(config.neg_pos_ratio * len(positive_cells)))
    else:
        want = ZERO_CORNER_NEGATIVES
    take = min(want, len(pool))
    chosen = rng.choice(pool, size=take, replace=False) if take else np.empty(0, np.int64)
    negative_cells = np.stack(np.unravel_index(chosen, (s, s)), axis=1)
    return SampleAssignment(positive_cells, positive_gt, negative_cells)


def corner_loss(scores: Tensor, refinements: Tensor | None,
                assignment: SampleAssignment, gt: GroundTruth,
                config: TrainConfig) -> tuple[Tensor, Tensor]:
    """(l_cls, l_loc): BCE over sampled cells, smooth L1 over positive offsets.

    Only positive cells contribute to l_loc; the target offset is the GT
    corner's position relative to the cell center, in cell units.
    """
    s = scores.data.shape[-1]
    cells = np.concatenate([assignment.positive_cells, assignment.negative_cells])
    if len(cells) == 0:
        l_cls = Tensor(np.zeros(()))
    else:
        flat = cells[:, 1] * s + cells[:, 0]  # scores layout is [row=j, col=i]
        picked = T.gather(T.reshape(scores, (-1,)), flat)
        targets = np.concatenate([
            np.ones(assignment.n_pos, dtype=np.float32),
            np.zeros(len(assignment.negative_cells), dtype=np.float32)])
        l_cls = T.bce_mean(picked, targets)

    if assignment.n_pos:
        if refinements is None:
            raise ValueError("positive cells present but no refinements given")
        centers = assignment.positive_cells + 0.5
        target = (gt.corners[assignment.positive_gt] - centers).astype(np.float32)
        diff = T.sub(refinements, Tensor(target))
        l_loc = T.scale(T.tensor_sum(T.smooth_l1(diff)), 1.0 / assignment.n_pos)
    else:
        l_loc = Tensor(np.zeros(()))
    return l_cls, l_loc


def edge_loss(edge_scores: Tensor, edge_labels) -> Tensor:
    """Mean binary cross-entropy of proposal scores against {0,1} labels."""
    labels = np.asarray(edge_labels, dtype=np.float32)
    if edge_scores.data.shape != labels.shape:
        raise ValueError(
            f"{edge_scores.data.shape} scores vs {labels.shape} labels")
    return T.bce_mean(edge_scores, labels)


def assign_edge_samples(proposals, corners, gt: GroundTruth, match_tol: float,
                        rng: np.random.Generator, neg_pos_ratio: float = 1.0):
    """Label proposals against GT edges and balance the negatives.

    A proposal is positive iff both endpoints lie within match_tol (cells) of
    the respective endpoints of some GT edge with the same orientation.
    Returns (labels for all proposals, indices of the balanced subset).
    """
    corners = np.asarray(corners, dtype=np.float64).reshape(-1, 2)
    labels = np.zeros(len(proposals), dtype=np.int64)
    gt_segs = []
    for a, b in gt.edges:
        pa, pb = gt.corners[a], gt.corners[b]
        orient = "horizontal" if abs(pa[0] - pb[0]) > abs(pa[1] - pb[1]) else "vertical"
        gt_segs.append((pa, pb, orient))
    for k, prop in enumerate(proposals):
        a = corners[prop.a]
        b = corners[prop.b]
        for pa, pb, orient in gt_segs:
            if orient != prop.orientation:
                continue
            straight = (np.hypot(*(a - pa)) <= match_tol
                        and np.hypot(*(b - pb)) <= match_tol)
            crossed = (np.hypot(*(a - pb)) <= match_tol
                       and np.hypot(*(b - pa)) <= match_tol)
            if straight or crossed:
                labels[k] = 1
                break
    pos_idx = np.flatnonzero(labels == 1)
    neg_idx = np.flatnonzero(labels == 0)
    want = int(math.ceil(neg_pos_ratio * len(pos_idx)))
    take = min(want, len(neg_idx))
    chosen = rng.choice(neg_idx, size=take, replace=False) if take else np.empty(0, np.int64)
    subset = np.concatenate([pos_idx, chosen])
    return labels, subset


@dataclass
class Adam:
    """Adam over a named parameter dict; state kept in float32."""

    params: dict[str, Tensor]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _m: dict = field(default_factory=dict)
    _v: dict = field(default_factory=dict)

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m.setdefault(name, np.zeros_like(p.data))
            v = self._v.setdefault(name, np.zeros_like(p.data))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= np.float32(self.lr) * update

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def train_step(net: nn.PillarNet, tile_input: np.ndarray, gt: GroundTruth,
               config: TrainConfig, assign_rng, edge_rng) -> tuple[Tensor, LossBreakdown]:
    """Forward + losses for one tile. Returns (l_total node, detached breakdown)."""
    s = tile_input.shape[-1]
    fmap = net.forward_backbone(Tensor(tile_input))
    scores = net.corner_score_head(fmap)
    assignment = assign_corner_samples(gt, s, config, assign_rng)
    refinements = None
    if assignment.n_pos:
        refinements = net.refine_cells(fmap, assignment.positive_cells,
                                       float(config.corner_box_side))
    l_cls, l_loc = corner_loss(scores, refinements, assignment, gt, config)
    l_e = _edge_term(net, fmap, gt, config, edge_rng)
    l_total = T.add(T.add(l_cls, T.scale(l_loc, config.lambda_loc)),
                    T.scale(l_e, config.lambda_E))
    breakdown = LossBreakdown(
        l_total=l_total.item(), l_c=l_cls.item() + config.lambda_loc * l_loc.item(),
        l_cls=l_cls.item(), l_loc=l_loc.item(), l_e=l_e.item())
    return l_total, breakdown


def _edge_term(net, fmap, gt: GroundTruth, config, edge_rng) -> Tensor:
    """Edge-verification BCE on proposals built from jittered GT corners.

    Jitter emulates detection noise so the verifier sees realistic inputs;
    proposals are labeled against the GT edges and balanced 1:1.
    """
    if len(gt.corners) == 0 or len(gt.edges) == 0:
        return Tensor(np.zeros(()))
    jitter = edge_rng.normal(0.0, EDGE_JITTER_CELLS, size=gt.corners.shape)
    noisy = gt.corners + jitter
    proposals = edges_mod.propose_edges(noisy)
    if not proposals:
        return Tensor(np.zeros(()))
    labels, subset = assign_edge_samples(proposals, noisy, gt, EDGE_MATCH_TOL,
                                         edge_rng, config.neg_pos_ratio)
    if len(subset) == 0:
        return Tensor(np.zeros(()))
    picked_scores = T.stack([
        net.edge_score(fmap, noisy[proposals[k].a], noisy[proposals[k].b])
        for k in subset])
    return edge_loss(picked_scores, labels[subset])


def train(dataset, config: TrainConfig, net: nn.PillarNet | None = None,
          log_path=None, checkpoint_path=None, checkpoint_every: int = 10,
          net_config: nn.NetworkConfig | None = None):
    """Train on (tile_input, GroundTruth) pairs, one tile per optimizer step.

    Deterministic under a fixed config.seed: weight init, the per-epoch
    shuffle and all sampling derive from it. The learning rate drops by
    decay_factor at decay_epoch. A checkpoint is written every
    checkpoint_every epochs (and at the end) when checkpoint_path is given;
    on a non-finite loss the last good checkpoint is kept and
    TrainingDiverged is raised.

    Returns (net, history) with one LossBreakdown per step.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    if net is None:
        n_bins = dataset[0][0].shape[0]
        cfg = net_config or nn.NetworkConfig(n_bins=n_bins)
        if cfg.n_bins != n_bins:
            raise ValueError(f"net_config.n_bins={cfg.n_bins} but tiles have {n_bins}")
        if cfg.refine_scale != config.corner_box_side / 2.0:
            cfg = dataclasses.replace(cfg, refine_scale=config.corner_box_side / 2.0)
        net = nn.PillarNet(cfg, seed=config.seed)

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_rng = np.random.default_rng(seeds[0])
    assign_rng = np.random.default_rng(seeds[1])
    edge_rng = np.random.default_rng(seeds[2])

    optimizer = Adam(net.parameters(), lr=config.lr)
    history: list[LossBreakdown] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    last_checkpoint = None
    try:
        for epoch in range(config.epochs):
            optimizer.lr = config.lr_at(epoch)
            order = shuffle_rng.permutation(len(dataset))
            for step, sample_idx in enumerate(order):
                tile_input, gt = dataset[sample_idx]
                optimizer.zero_grad()
                l_total, breakdown = train_step(
                    net, tile_input, gt, config, assign_rng, edge_rng)
                if not math.isfinite(breakdown.l_total):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step}",
                        last_checkpoint=last_checkpoint)
                l_total.backward()
                optimizer.step()
                history.append(breakdown)
                if log_fh:
                    log_fh.write(json.dumps({
                        "epoch": epoch, "step": step,
                        "l_total": breakdown.l_total, "l_cls": breakdown.l_cls,
                        "l_loc": breakdown.l_loc, "l_e": breakdown.l_e,
                        "lr": optimizer.lr}) + "\n")
            if checkpoint_path and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
                net.save(checkpoint_path)
                last_checkpoint = Path(checkpoint_path)
        if checkpoint_path:
            net.save(checkpoint_path)
    finally:
        if log_fh:
            log_fh.close()
    return net, history
