"""Hot kernels with two interchangeable backends.

The compiled Cython extension (`_native`) is preferred when it was built;
otherwise the pure-numpy fallback (`numpy_backend`) is used. Both implement
the same contracts with bit-identical results (the extension is compiled
with FP contraction off so the float arithmetic matches numpy op for op).

Selection happens at import time; set FLOORPP_BACKEND=numpy|native to force
one, or call `set_backend` (used by tests and the benchmark).
"""

import os

from . import numpy_backend

_IMPLS = {"numpy": numpy_backend}

try:
    from . import _native

    _IMPLS["native"] = _native
except ImportError:
    _native = None

_requested = os.environ.get("FLOORPP_BACKEND", "").strip().lower()
if _requested and _requested in _IMPLS:
    _impl = _IMPLS[_requested]
elif _requested and _requested not in _IMPLS:
    raise ImportError(
        f"FLOORPP_BACKEND={_requested!r} requested but that backend is not "
        f"available (have: {sorted(_IMPLS)})"
    )
else:
    _impl = _IMPLS.get("native", numpy_backend)


def available_backends():
    return sorted(_IMPLS)


def get_backend():
    return "native" if _impl is _IMPLS.get("native") else "numpy"


def set_backend(name):
    """Switch the active backend. Returns the previous backend name."""
    global _impl
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; have {sorted(_IMPLS)}")
    previous = get_backend()
    _impl = _IMPLS[name]
    return previous


def rasterize_occupancy(xs, ys, zs, origin_x, origin_y, cell_size,
                        z_floor, z_ceiling, width, height, n_bins):
    """Scatter points into a (width, height, n_bins) boolean occupancy grid."""
    return _impl.rasterize_occupancy(
        xs, ys, zs, origin_x, origin_y, cell_size,
        z_floor, z_ceiling, width, height, n_bins)


def im2col(x, kh, kw, stride_h, stride_w):
    """Unfold (C, H, W) into (C*kh*kw, out_h*out_w) conv columns."""
    return _impl.im2col(x, kh, kw, stride_h, stride_w)


def col2im(cols, channels, height, width, kh, kw, stride_h, stride_w,
           out_h, out_w):
    """Fold conv columns back into (C, H, W), summing overlaps."""
    return _impl.col2im(cols, channels, height, width, kh, kw,
                        stride_h, stride_w, out_h, out_w)


def bilinear_gather(fmap, ys, xs):
    """Sample (C, H, W) at continuous texel coords; zero outside. -> (C, N)"""
    return _impl.bilinear_gather(fmap, ys, xs)


def bilinear_scatter(grad, ys, xs, height, width):
    """Adjoint of bilinear_gather: scatter (C, N) grads into (C, H, W)."""
    return _impl.bilinear_scatter(grad, ys, xs, height, width)
