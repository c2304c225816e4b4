# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Mirrors numpy_backend bit for bit: identical float64 index arithmetic,
identical float32 expression order (the extension is built with
-ffp-contract=off so no FMA contraction), identical accumulation order on
scatter collisions.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def rasterize_occupancy(double[:] xs, double[:] ys, double[:] zs,
                        double origin_x, double origin_y, double cell_size,
                        double z_floor, double z_ceiling,
                        Py_ssize_t width, Py_ssize_t height, Py_ssize_t n_bins):
    occ_arr = np.zeros((width, height, n_bins), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] occ = occ_arr
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t k, gx, gy, gz
    cdef double x, y, z
    cdef double bin_h = (z_ceiling - z_floor) / n_bins
    cdef double x_max = origin_x + width * cell_size
    cdef double y_max = origin_y + height * cell_size
    for k in range(n):
        x = xs[k]
        y = ys[k]
        z = zs[k]
        if z < z_floor or z > z_ceiling:
            continue
        if x < origin_x or x > x_max or y < origin_y or y > y_max:
            continue
        gx = <Py_ssize_t>floor((x - origin_x) / cell_size)
        gy = <Py_ssize_t>floor((y - origin_y) / cell_size)
        gz = <Py_ssize_t>floor((z - z_floor) / bin_h)
        if gx > width - 1:
            gx = width - 1
        if gy > height - 1:
            gy = height - 1
        if gz > n_bins - 1:
            gz = n_bins - 1
        occ[gx, gy, gz] = 1
    return occ_arr.view(np.bool_)


def im2col(float[:, :, :] x, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t stride_h, Py_ssize_t stride_w):
    cdef Py_ssize_t c = x.shape[0]
    cdef Py_ssize_t h = x.shape[1]
    cdef Py_ssize_t w = x.shape[2]
    cdef Py_ssize_t out_h = (h - kh) // stride_h + 1
    cdef Py_ssize_t out_w = (w - kw) // stride_w + 1
    cols_arr = np.empty((c * kh * kw, out_h * out_w), dtype=np.float32)
    cdef float[:, ::1] cols = cols_arr
    cdef Py_ssize_t ci, i, j, oy, ox, row, base_y
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                for oy in range(out_h):
                    base_y = oy * stride_h + i
                    for ox in range(out_w):
                        cols[row, oy * out_w + ox] = x[ci, base_y, ox * stride_w + j]
    return cols_arr


def col2im(float[:, :] cols, Py_ssize_t channels, Py_ssize_t height,
           Py_ssize_t width, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t stride_h, Py_ssize_t stride_w,
           Py_ssize_t out_h, Py_ssize_t out_w):
    dx_arr = np.zeros((channels, height, width), dtype=np.float32)
    cdef float[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t ci, i, j, oy, ox, row, y
    # (i, j) outermost to match the fallback's accumulation order exactly
    for i in range(kh):
        for j in range(kw):
            for ci in range(channels):
                row = (ci * kh + i) * kw + j
                for oy in range(out_h):
                    y = oy * stride_h + i
                    for ox in range(out_w):
                        dx[ci, y, ox * stride_w + j] += cols[row, oy * out_w + ox]
    return dx_arr


def bilinear_gather(float[:, :, :] fmap, double[:] ys, double[:] xs):
    cdef Py_ssize_t c = fmap.shape[0]
    cdef Py_ssize_t h = fmap.shape[1]
    cdef Py_ssize_t w = fmap.shape[2]
    cdef Py_ssize_t n = ys.shape[0]
    out_arr = np.zeros((c, n), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t k, ci, dy, dx_, yi, xi, yc, xc
    cdef double y, x, y0f, x0f
    cdef float fy, fx, wy, wx, weight, acc
    cdef float one = 1.0
    for k in range(n):
        y = ys[k]
        x = xs[k]
        y0f = floor(y)
        x0f = floor(x)
        fy = <float>(y - y0f)
        fx = <float>(x - x0f)
        for ci in range(c):
            acc = 0.0
            for dy in range(2):
                wy = fy if dy else one - fy
                yi = <Py_ssize_t>y0f + dy
                yc = yi
                if yc < 0:
                    yc = 0
                elif yc > h - 1:
                    yc = h - 1
                for dx_ in range(2):
                    wx = fx if dx_ else one - fx
                    xi = <Py_ssize_t>x0f + dx_
                    xc = xi
                    if xc < 0:
                        xc = 0
                    elif xc > w - 1:
                        xc = w - 1
                    weight = wy * wx
                    if yi < 0 or yi >= h or xi < 0 or xi >= w:
                        weight = 0.0
                    acc += fmap[ci, yc, xc] * weight
            out[ci, k] = acc
    return out_arr


def bilinear_scatter(float[:, :] grad, double[:] ys, double[:] xs,
                     Py_ssize_t height, Py_ssize_t width):
    cdef Py_ssize_t c = grad.shape[0]
    cdef Py_ssize_t n = ys.shape[0]
    out_arr = np.zeros((c, height, width), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t k, ci, dy, dx_, yi, xi
    cdef double y, x, y0f, x0f
    cdef float fy, fx, wy, wx, weight
    cdef float one = 1.0
    # corner-major, sample order inside: the same collision order as the
    # fallback's per-corner np.add.at
    for dy in range(2):
        for dx_ in range(2):
            for k in range(n):
                y = ys[k]
                x = xs[k]
                y0f = floor(y)
                x0f = floor(x)
                yi = <Py_ssize_t>y0f + dy
                xi = <Py_ssize_t>x0f + dx_
                if yi < 0 or yi >= height or xi < 0 or xi >= width:
                    continue
                fy = <float>(y - y0f)
                fx = <float>(x - x0f)
                wy = fy if dy else one - fy
                wx = fx if dx_ else one - fx
                weight = wy * wx
                for ci in range(c):
                    out[ci, yi, xi] += grad[ci, k] * weight
    return out_arr
