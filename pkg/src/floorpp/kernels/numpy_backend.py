"""Pure-numpy implementations of the hot kernels.

Reference semantics for the compiled backend: `_native` must reproduce these
results bit for bit (same index arithmetic in float64, same float32
expression order, same accumulation order on scatter collisions).
"""

import numpy as np


def rasterize_occupancy(xs, ys, zs, origin_x, origin_y, cell_size,
                        z_floor, z_ceiling, width, height, n_bins):
    """Set bit (i, j, k) for every point in cell (i, j) with z in bin k.

    Points outside the vertical band [z_floor, z_ceiling] or outside the
    horizontal grid are skipped; points exactly on the top edge of the grid
    or band are clamped into the last cell/bin.
    """
    occ = np.zeros((width, height, n_bins), dtype=bool)
    if xs.size == 0:
        return occ
    bin_h = (z_ceiling - z_floor) / n_bins
    gx = np.floor((xs - origin_x) / cell_size).astype(np.int64)
    gy = np.floor((ys - origin_y) / cell_size).astype(np.int64)
    gz = np.floor((zs - z_floor) / bin_h).astype(np.int64)
    keep = (
        (zs >= z_floor) & (zs <= z_ceiling)
        & (xs >= origin_x) & (xs <= origin_x + width * cell_size)
        & (ys >= origin_y) & (ys <= origin_y + height * cell_size)
    )
    gx = np.minimum(gx[keep], width - 1)
    gy = np.minimum(gy[keep], height - 1)
    gz = np.minimum(gz[keep], n_bins - 1)
    occ[gx, gy, gz] = True
    return occ


def im2col(x, kh, kw, stride_h, stride_w):
    c, h, w = x.shape
    out_h = (h - kh) // stride_h + 1
    out_w = (w - kw) // stride_w + 1
    s0, s1, s2 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(c, kh, kw, out_h, out_w),
        strides=(s0, s1, s2, s1 * stride_h, s2 * stride_w),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(c * kh * kw, out_h * out_w)


def col2im(cols, channels, height, width, kh, kw, stride_h, stride_w,
           out_h, out_w):
    dx = np.zeros((channels, height, width), dtype=np.float32)
    dc = cols.reshape(channels, kh, kw, out_h, out_w)
    for i in range(kh):
        for j in range(kw):
            dx[:, i:i + out_h * stride_h:stride_h,
               j:j + out_w * stride_w:stride_w] += dc[:, i, j]
    return dx


def bilinear_gather(fmap, ys, xs):
    c, h, w = fmap.shape
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = (ys - y0).astype(np.float32)
    fx = (xs - x0).astype(np.float32)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    one = np.float32(1.0)
    out = np.zeros((c, ys.shape[0]), dtype=np.float32)
    for dy, wy in ((0, one - fy), (1, fy)):
        for dx_, wx in ((0, one - fx), (1, fx)):
            yi = y0 + dy
            xi = x0 + dx_
            valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            weight = (wy * wx) * valid.astype(np.float32)
            vals = fmap[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += vals * weight
    return out


def bilinear_scatter(grad, ys, xs, height, width):
    c = grad.shape[0]
    out = np.zeros((c, height, width), dtype=np.float32)
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = (ys - y0).astype(np.float32)
    fx = (xs - x0).astype(np.float32)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    one = np.float32(1.0)
    for dy, wy in ((0, one - fy), (1, fy)):
        for dx_, wx in ((0, one - fx), (1, fx)):
            yi = y0 + dy
            xi = x0 + dx_
            valid = (yi >= 0) & (yi < height) & (xi >= 0) & (xi < width)
            if not valid.any():
                continue
            weight = (wy * wx)[valid]
            np.add.at(out, (slice(None), yi[valid], xi[valid]),
                      grad[:, valid] * weight)
    return out
