"""The pillar network: encoder-decoder backbone over occupancy tiles, a
corner score head, an RoIAlign-based corner refinement head, and an edge
verification head, plus the binary checkpoint format.

Coordinate convention: network tensors are (channels, rows, cols) with
rows = grid y and cols = grid x. Cell (i, j) of the pillar grid maps to
tensor position [j, i]; its center sits at continuous grid coords
(i + 0.5, j + 0.5), and feature-map texel (j, i) carries that cell's value.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import CheckpointError
from . import tensor as T
from .tensor import Tensor

CHECKPOINT_MAGIC = b"FPPN"
CHECKPOINT_VERSION = 1
_META_PREFIX = "meta/"


@dataclass(frozen=True)
class NetworkConfig:
    n_bins: int = 32
    widths: tuple[int, int, int] = (16, 32, 64)
    c_feat: int = 32
    roi_pool: int = 7
    edge_samples: int = 16
    refine_scale: float = 4.5  # half the corner box side, in cells
    refine_hidden: int = 64


@dataclass(frozen=True)
class RoIBox:
    """Region of interest in continuous grid coords (x right, y up in rows)."""

    center: tuple[float, float]  # (x, y)
    width: float
    height: float
    pooled_size: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"RoI box must have positive dims, got "
                             f"{self.width}x{self.height}")


def roi_align(fmap: Tensor, box: RoIBox) -> Tensor:
    """Pool the box into (C, P, P): one bilinear sample per output bin center.

    Samples outside the feature map read as zero. Linear (hence
    differentiable) in the feature map.
    """
    p = box.pooled_size
    cx, cy = box.center
    ys = cy - box.height / 2 + (np.arange(p) + 0.5) * (box.height / p)
    xs = cx - box.width / 2 + (np.arange(p) + 0.5) * (box.width / p)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = T.bilinear_sample(fmap, yy.ravel() - 0.5, xx.ravel() - 0.5)
    return T.reshape(out, (fmap.data.shape[0], p, p))


class PillarNet:
    """Corner detection and edge verification over pillar occupancy tiles."""

    def __init__(self, config: NetworkConfig = NetworkConfig(), seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        w0, w1, w2 = config.widths
        cf = config.c_feat

        def conv(name, out_c, in_c, kh=3, kw=3):
            self._add_param(rng, f"{name}.w", (out_c, in_c, kh, kw), in_c * kh * kw)
            self._add_param(rng, f"{name}.b", (out_c,), None)

        conv("enc0.conv1", w0, config.n_bins)
        conv("enc0.conv2", w0, w0)
        conv("enc1.conv1", w1, w0)
        conv("enc1.conv2", w1, w1)
        conv("enc2.conv1", w2, w1)
        conv("enc2.conv2", w2, w2)
        conv("enc3.conv1", w2, w2)
        conv("enc3.conv2", w2, w2)
        conv("dec2.conv", w2, w2)
        conv("dec1.conv", w1, w2)
        conv("dec0.conv", w0, w1)
        conv("feat.conv", cf, w0)
        conv("score.conv", 1, cf, 1, 1)

        p = config.roi_pool
        self._add_param(rng, "refine.fc1.w", (config.refine_hidden, cf * p * p),
                        cf * p * p)
        self._add_param(rng, "refine.fc1.b", (config.refine_hidden,), None)
        self._add_param(rng, "refine.fc2.w", (2, config.refine_hidden),
                        config.refine_hidden)
        self._add_param(rng, "refine.fc2.b", (2,), None)
        for blk in (1, 2, 3):
            conv(f"edge.block{blk}.conv1", cf, cf, 1, 3)
            conv(f"edge.block{blk}.conv2", cf, cf, 1, 3)
        self._add_param(rng, "edge.fc.w", (1, cf), cf)
        self._add_param(rng, "edge.fc.b", (1,), None)

    def _add_param(self, rng, name, shape, fan_in):
        if fan_in is None:
            data = np.zeros(shape, dtype=np.float32)
        else:
            std = np.sqrt(2.0 / fan_in)
            data = rng.normal(0.0, std, size=shape).astype(np.float32)
        self.params[name] = Tensor(data, requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def _conv_block(self, x, name, stride=1):
        p = self.params
        return T.relu(T.conv2d(x, p[f"{name}.w"], p[f"{name}.b"],
                               stride=stride, padding=1))

    def forward_backbone(self, tile: Tensor) -> Tensor:
        """(n_bins, S, S) occupancy channels -> (c_feat, S, S) feature map.

        Three stride-2 encoder levels, decoder with nearest-neighbor
        upsampling and additive skip connections. S must be divisible by 8.
        """
        _, h, w = tile.data.shape
        if h % 8 or w % 8:
            raise ValueError(f"tile size {h}x{w} must be divisible by 8")
        p = self.params
        e0 = self._conv_block(self._conv_block(tile, "enc0.conv1"), "enc0.conv2")
        e1 = self._conv_block(self._conv_block(e0, "enc1.conv1", 2), "enc1.conv2")
        e2 = self._conv_block(self._conv_block(e1, "enc2.conv1", 2), "enc2.conv2")
        e3 = self._conv_block(self._conv_block(e2, "enc3.conv1", 2), "enc3.conv2")
        d2 = T.relu(T.add(T.conv2d(T.upsample2x(e3), p["dec2.conv.w"],
                                   p["dec2.conv.b"], padding=1), e2))
        d1 = T.relu(T.add(T.conv2d(T.upsample2x(d2), p["dec1.conv.w"],
                                   p["dec1.conv.b"], padding=1), e1))
        d0 = T.relu(T.add(T.conv2d(T.upsample2x(d1), p["dec0.conv.w"],
                                   p["dec0.conv.b"], padding=1), e0))
        return T.relu(T.conv2d(d0, p["feat.conv.w"], p["feat.conv.b"], padding=1))

    def corner_score_head(self, fmap: Tensor) -> Tensor:
        """Per-cell corner probability in (0, 1), shape (1, S, S)."""
        p = self.params
        return T.sigmoid(T.conv2d(fmap, p["score.conv.w"], p["score.conv.b"]))

    def corner_refine_head(self, roi_feat: Tensor) -> Tensor:
        """Sub-cell offset (dx, dy) in cells, bounded by +-refine_scale."""
        c, ph, pw = roi_feat.data.shape
        flat = T.reshape(roi_feat, (1, c * ph * pw))
        return T.reshape(self._refine_from_flat(flat), (2,))

    def _refine_from_flat(self, flat: Tensor) -> Tensor:
        p = self.params
        h = T.relu(T.linear(flat, p["refine.fc1.w"], p["refine.fc1.b"]))
        out = T.linear(h, p["refine.fc2.w"], p["refine.fc2.b"])
        return T.scale(T.tanh(out), self.config.refine_scale)

    def refine_cells(self, fmap: Tensor, cells, box_side: float) -> Tensor:
        """Batched refinement at cell centers: (N, 2) offsets in cell units."""
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        n = len(cells)
        p = self.config.roi_pool
        cf = self.config.c_feat
        step = box_side / p
        rel = (np.arange(p) + 0.5) * step - box_side / 2
        centers = cells + 0.5  # (N, 2) as (x, y)
        ys = (centers[:, 1][:, None, None] + rel[None, :, None])  # (N, P, 1)
        xs = (centers[:, 0][:, None, None] + rel[None, None, :])  # (N, 1, P)
        yy = np.broadcast_to(ys, (n, p, p)).ravel()
        xx = np.broadcast_to(xs, (n, p, p)).ravel()
        samples = T.bilinear_sample(fmap, yy - 0.5, xx - 0.5)  # (C, N*P*P)
        rois = T.transpose(T.reshape(samples, (cf, n, p, p)), (1, 0, 2, 3))
        return self._refine_from_flat(T.reshape(rois, (n, cf * p * p)))

    def edge_samples(self, fmap: Tensor, a_xy, b_xy) -> Tensor:
        """(c_feat, P_e) bilinear samples at equal intervals along a segment."""
        pe = self.config.edge_samples
        a = np.asarray(a_xy, dtype=np.float64)
        b = np.asarray(b_xy, dtype=np.float64)
        t = (np.arange(pe) + 0.5) / pe
        pts = a[None, :] + t[:, None] * (b - a)[None, :]
        return T.bilinear_sample(fmap, pts[:, 1] - 0.5, pts[:, 0] - 0.5)

    def edge_head(self, samples: Tensor) -> Tensor:
        """Edge probability from (c_feat, P_e) segment samples: scalar in (0, 1).

        Three residual blocks over the sample sequence, then global average
        pooling and a sigmoid classifier.
        """
        p = self.params
        cf = self.config.c_feat
        x = T.reshape(samples, (cf, 1, samples.data.shape[1]))
        for blk in (1, 2, 3):
            y = T.relu(T.conv2d(x, p[f"edge.block{blk}.conv1.w"],
                                p[f"edge.block{blk}.conv1.b"], padding=(0, 1)))
            y = T.conv2d(y, p[f"edge.block{blk}.conv2.w"],
                         p[f"edge.block{blk}.conv2.b"], padding=(0, 1))
            x = T.relu(T.add(x, y))
        pooled = T.mean(x, axis=(1, 2))
        out = T.linear(T.reshape(pooled, (1, cf)), p["edge.fc.w"], p["edge.fc.b"])
        return T.reshape(T.sigmoid(out), ())

    def edge_score(self, fmap: Tensor, a_xy, b_xy) -> Tensor:
        return self.edge_head(self.edge_samples(fmap, a_xy, b_xy))

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        entries = {name: t.data for name, t in self.params.items()}
        c = self.config
        meta = {
            "n_bins": [c.n_bins],
            "widths": list(c.widths),
            "c_feat": [c.c_feat],
            "roi_pool": [c.roi_pool],
            "edge_samples": [c.edge_samples],
            "refine_scale": [c.refine_scale],
            "refine_hidden": [c.refine_hidden],
        }
        for key, vals in meta.items():
            entries[_META_PREFIX + key] = np.asarray(vals, dtype=np.float32)
        save_checkpoint(entries, path)

    @classmethod
    def load(cls, path) -> "PillarNet":
        entries = load_checkpoint(path)
        meta = {k[len(_META_PREFIX):]: v for k, v in entries.items()
                if k.startswith(_META_PREFIX)}
        required = {"n_bins", "widths", "c_feat", "roi_pool", "edge_samples",
                    "refine_scale", "refine_hidden"}
        missing = required - set(meta)
        if missing:
            raise CheckpointError(f"{path}: missing meta entries {sorted(missing)}")
        config = NetworkConfig(
            n_bins=int(meta["n_bins"][0]),
            widths=tuple(int(v) for v in meta["widths"]),
            c_feat=int(meta["c_feat"][0]),
            roi_pool=int(meta["roi_pool"][0]),
            edge_samples=int(meta["edge_samples"][0]),
            refine_scale=float(meta["refine_scale"][0]),
            refine_hidden=int(meta["refine_hidden"][0]),
        )
        net = cls(config, seed=0)
        for name, param in net.params.items():
            if name not in entries:
                raise CheckpointError(f"{path}: missing parameter {name!r}")
            if entries[name].shape != param.data.shape:
                raise CheckpointError(
                    f"{path}: parameter {name!r} has shape {entries[name].shape}, "
                    f"expected {param.data.shape}")
            param.data = np.ascontiguousarray(entries[name], dtype=np.float32)
        return net


def save_checkpoint(params: dict[str, np.ndarray], path) -> None:
    """Write named float32 arrays in the binary checkpoint format.

    Layout (all little-endian): magic "FPPN", u32 version, u32 param count,
    then per param: u16 name length, UTF-8 name, u8 ndim, u32 dims[ndim],
    float32 data. Params are written in sorted name order so identical
    parameter sets produce identical bytes.
    """
    names = sorted(params)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(names)))
        for name in names:
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint written by save_checkpoint; rejects unknown magic/version."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected FPPN")
    if len(blob) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            dims = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
        except (struct.error, ValueError) as exc:
            raise CheckpointError(f"{path}: truncated or corrupt record: {exc}") from None
        out[name] = arr.reshape(dims).astype(np.float32)
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return out
