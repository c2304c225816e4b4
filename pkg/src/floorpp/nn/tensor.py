"""Reverse-mode autodiff over float32 numpy arrays.

Every op records its parents and a backward closure; `Tensor.backward()` on
a scalar walks the graph in reverse topological order. Gradients accumulate
across backward calls until the caller zeroes them. Ops whose inputs do not
require grad return plain leaf tensors, so inference builds no graph.
"""

from __future__ import annotations

import numpy as np

from .. import kernels

_F32 = np.float32


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        # asarray with order="C", not ascontiguousarray: the latter would
        # promote 0-d scalars to 1-d
        self.data = np.asarray(data, dtype=_F32, order="C")
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> np.ndarray:
        return self.data

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires_grad leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _node(data, parents, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=_F32, order="C")
    out.grad = None
    live = tuple(p for p in parents if p is not None)
    if any(p.requires_grad for p in live):
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _reduce_to(g, shape):
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        a._accumulate(_reduce_to(g, a.data.shape))
        b._accumulate(_reduce_to(g, b.data.shape))

    return _node(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        a._accumulate(_reduce_to(g, a.data.shape))
        b._accumulate(-_reduce_to(g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        a._accumulate(_reduce_to(g * b.data, a.data.shape))
        b._accumulate(_reduce_to(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    f = _F32(factor)
    data = x.data * f

    def backward(g):
        x._accumulate(g * f)

    return _node(data, (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2D operands, got {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _node(data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: (N, F) x (O, F) + (O,) -> (N, O)."""
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"linear shape mismatch: {x.shape} vs {w.shape}")
    data = x.data @ w.data.T + b.data

    def backward(g):
        x._accumulate(g @ w.data)
        w._accumulate(g.T @ x.data)
        b._accumulate(g.sum(axis=0))

    return _node(data, (x, w, b), backward)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, _F32(0.0))

    def backward(g):
        x._accumulate(g * (x.data > 0))

    return _node(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    data = np.empty_like(d)
    pos = d >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ed = np.exp(d[~pos])
    data[~pos] = ed / (1.0 + ed)

    def backward(g):
        x._accumulate(g * data * (1.0 - data))

    return _node(data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - data * data))

    return _node(data, (x,), backward)


def tensor_sum(x: Tensor) -> Tensor:
    data = x.data.sum(dtype=_F32)

    def backward(g):
        x._accumulate(np.broadcast_to(g, x.data.shape).astype(_F32))

    return _node(data, (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    data = x.data.mean(axis=axis, dtype=_F32)
    count = x.data.size if axis is None else np.prod(
        [x.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def backward(g):
        if axis is None:
            expanded = np.broadcast_to(g, x.data.shape)
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            gk = np.expand_dims(g, axes)
            expanded = np.broadcast_to(gk, x.data.shape)
        x._accumulate((expanded / _F32(count)).astype(_F32))

    return _node(data, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.data.shape))

    return _node(data, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    data = x.data.transpose(axes)
    inverse = np.argsort(axes)

    def backward(g):
        x._accumulate(g.transpose(inverse))

    return _node(data, (x,), backward)


def gather(x: Tensor, indices) -> Tensor:
    """Pick elements of the flattened tensor: out[n] = flat(x)[indices[n]]."""
    idx = np.asarray(indices, dtype=np.int64)
    data = x.data.reshape(-1)[idx]

    def backward(g):
        dx = np.zeros(x.data.size, dtype=_F32)
        np.add.at(dx, idx, g)
        x._accumulate(dx.reshape(x.data.shape))

    return _node(data, (x,), backward)


def stack(tensors) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    tensors = list(tensors)
    data = np.stack([t.data for t in tensors])

    def backward(g):
        for i, t in enumerate(tensors):
            t._accumulate(g[i])

    return _node(data, tuple(tensors), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """2D cross-correlation: (C, H, W) with (O, C, kh, kw) filters -> (O, H', W').

    Output spatial size is floor((in + 2*padding - k) / stride) + 1 per axis.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ValueError("stride must be >= 1")
    out_ch, in_ch, kh, kw = w.data.shape
    if x.data.ndim != 3 or x.data.shape[0] != in_ch:
        raise ValueError(
            f"conv2d shape mismatch: input {x.shape} vs weight {w.shape}")
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    _, hp, wp = xp.shape
    if hp < kh or wp < kw:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    out_h = (hp - kh) // sh + 1
    out_w = (wp - kw) // sw + 1
    cols = kernels.im2col(xp, kh, kw, sh, sw)
    wmat = w.data.reshape(out_ch, -1)
    out2 = wmat @ cols
    if b is not None:
        if b.data.shape != (out_ch,):
            raise ValueError(f"bias shape {b.shape} does not match {out_ch} channels")
        out2 = out2 + b.data[:, None]
    data = out2.reshape(out_ch, out_h, out_w)

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(out_ch, -1))
        if b is not None:
            b._accumulate(g2.sum(axis=1))
        w._accumulate((g2 @ cols.T).reshape(w.data.shape))
        if x.requires_grad:
            dcols = wmat.T @ g2
            dxp = kernels.col2im(dcols, in_ch, hp, wp, kh, kw, sh, sw, out_h, out_w)
            dx = dxp[:, ph:hp - ph, pw:wp - pw] if (ph or pw) else dxp
            x._accumulate(dx)

    return _node(data, (x, w, b), backward)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling of (C, H, W)."""
    c, h, w = x.data.shape
    data = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def backward(g):
        x._accumulate(g.reshape(c, h, 2, w, 2).sum(axis=(2, 4), dtype=_F32))

    return _node(data, (x,), backward)


def bilinear_sample(fmap: Tensor, ys, xs) -> Tensor:
    """Bilinear samples of (C, H, W) at continuous texel coords -> (C, N).

    Texel (i, j) sits at coordinate (i, j); reads outside the map are zero.
    Differentiable w.r.t. the feature map (not the coordinates).
    """
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    _, h, w = fmap.data.shape
    data = kernels.bilinear_gather(fmap.data, ys, xs)

    def backward(g):
        fmap._accumulate(kernels.bilinear_scatter(
            np.ascontiguousarray(g), ys, xs, h, w))

    return _node(data, (fmap,), backward)


_BCE_EPS = 1e-7


def bce_mean(probs: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of probabilities against {0,1} targets.

    Probabilities are clamped to [1e-7, 1 - 1e-7]; the gradient is zero where
    the clamp is active.
    """
    t = np.asarray(targets, dtype=_F32)
    if t.shape != probs.data.shape:
        raise ValueError(f"targets shape {t.shape} != probs shape {probs.data.shape}")
    p = np.clip(probs.data, _BCE_EPS, 1.0 - _BCE_EPS).astype(_F32)
    data = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean(dtype=_F32)
    n = max(p.size, 1)

    def backward(g):
        inside = (probs.data > _BCE_EPS) & (probs.data < 1.0 - _BCE_EPS)
        grad = (p - t) / (p * (1.0 - p)) / _F32(n)
        probs._accumulate(g * grad * inside)

    return _node(data, (probs,), backward)


def smooth_l1(x: Tensor) -> Tensor:
    """Elementwise smooth L1: 0.5*t^2 for |t| < 1, |t| - 0.5 otherwise."""
    a = np.abs(x.data)
    data = np.where(a < 1.0, 0.5 * x.data * x.data, a - 0.5).astype(_F32)

    def backward(g):
        d = np.where(a < 1.0, x.data, np.sign(x.data)).astype(_F32)
        x._accumulate(g * d)

    return _node(data, (x,), backward)
