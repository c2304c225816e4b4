import math

import numpy as np
import pytest

from floorpp.nn import tensor as T
from floorpp.nn.tensor import Tensor


def conv2d_loops(x, w, b=None, stride=1, padding=0):
    """Direct 6-loop convolution oracle."""
    sh = sw = stride
    ph = pw = padding
    out_c, in_c, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    _, hp, wp = xp.shape
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1
    out = np.zeros((out_c, oh, ow), dtype=np.float64)
    for o in range(out_c):
        for y in range(oh):
            for x_ in range(ow):
                acc = 0.0
                for c in range(in_c):
                    for i in range(kh):
                        for j in range(kw):
                            acc += float(xp[c, y * sh + i, x_ * sw + j]) * float(w[o, c, i, j])
                out[o, y, x_] = acc + (float(b[o]) if b is not None else 0.0)
    return out


def bilinear_oracle(fmap, y, x):
    """Independent scalar bilinear interpolation with zero padding."""
    c, h, w = fmap.shape
    y0, x0 = math.floor(y), math.floor(x)
    fy, fx = y - y0, x - x0
    out = np.zeros(c, dtype=np.float64)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            yi, xi = y0 + dy, x0 + dx
            if 0 <= yi < h and 0 <= xi < w:
                out += fmap[:, yi, xi].astype(np.float64) * (wy * wx)
    return out


def fd_gradcheck(build, params, rng, eps=1e-3, rel_tol=1e-2, abs_tol=1e-4,
                 max_elems=10):
    """Analytic grads of build() (scalar Tensor) vs central finite differences."""
    for p in params:
        p.zero_grad()
    build().backward()
    grads = [p.grad.copy() for p in params]
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        if flat.size <= max_elems:
            idxs = np.arange(flat.size)
        else:
            idxs = rng.choice(flat.size, size=max_elems, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            lp = build().item()
            flat[i] = orig - eps
            lm = build().item()
            flat[i] = orig
            fd = (lp - lm) / (2 * eps)
            an = float(gflat[i])
            err = abs(fd - an)
            assert err <= abs_tol + rel_tol * max(abs(fd), abs(an)), (
                f"grad mismatch at {i}: analytic={an}, fd={fd}")


def weighted_sum(out, weights):
    """Reduce any tensor to a scalar with fixed random weights."""
    return T.tensor_sum(T.mul(out, Tensor(weights)))


class TestForwards:
    def test_conv_ones_sum(self):
        x = Tensor(np.ones((1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        b = Tensor(np.zeros(1))
        out = T.conv2d(x, w, b)
        assert out.data.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 9.0

    def test_conv_identity_kernel(self, rng):
        x = Tensor(rng.standard_normal((1, 6, 6)).astype(np.float32))
        k = np.zeros((1, 1, 3, 3), np.float32)
        k[0, 0, 1, 1] = 1.0
        out = T.conv2d(x, Tensor(k), Tensor(np.zeros(1)), padding=1)
        assert np.array_equal(out.data, x.data)

    def test_conv_vs_loop_oracle(self, rng):
        x = rng.standard_normal((4, 8, 8)).astype(np.float32)
        w = rng.standard_normal((2, 4, 3, 3)).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        for stride, padding in ((1, 0), (1, 1), (2, 1)):
            out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding)
            ref = conv2d_loops(x, w, b, stride, padding)
            assert out.data.shape == ref.shape
            assert np.max(np.abs(out.data - ref)) < 1e-5

    def test_conv_output_size_formula(self, rng):
        x = Tensor(rng.standard_normal((1, 11, 13)).astype(np.float32))
        w = Tensor(rng.standard_normal((1, 1, 3, 3)).astype(np.float32))
        out = T.conv2d(x, w, None, stride=2, padding=1)
        assert out.data.shape == (1, (11 + 2 - 3) // 2 + 1, (13 + 2 - 3) // 2 + 1)

    def test_conv_shape_mismatch(self, rng):
        x = Tensor(np.zeros((3, 5, 5)))
        w = Tensor(np.zeros((1, 4, 3, 3)))
        with pytest.raises(ValueError, match="mismatch"):
            T.conv2d(x, w, None)

    def test_relu_sigmoid_tanh(self):
        x = Tensor(np.array([-2.0, 0.0, 3.0]))
        assert np.array_equal(T.relu(x).data, [0, 0, 3])
        assert np.allclose(T.sigmoid(x).data, 1 / (1 + np.exp([2.0, 0.0, -3.0])),
                           atol=1e-6)
        assert np.allclose(T.tanh(x).data, np.tanh([-2, 0, 3]), atol=1e-6)

    def test_sigmoid_extremes_stable(self):
        x = Tensor(np.array([-100.0, 100.0]))
        s = T.sigmoid(x).data
        assert np.all(np.isfinite(s))
        assert 0.0 <= s[0] < 1e-30 and s[1] == 1.0

    def test_upsample2x(self):
        x = Tensor(np.arange(4, dtype=np.float32).reshape(1, 2, 2))
        up = T.upsample2x(x)
        assert up.data.shape == (1, 4, 4)
        assert np.array_equal(up.data[0], [[0, 0, 1, 1], [0, 0, 1, 1],
                                           [2, 2, 3, 3], [2, 2, 3, 3]])

    def test_matmul_linear(self, rng):
        a = rng.standard_normal((3, 4)).astype(np.float32)
        b = rng.standard_normal((4, 2)).astype(np.float32)
        assert np.allclose(T.matmul(Tensor(a), Tensor(b)).data, a @ b, atol=1e-6)
        w = rng.standard_normal((2, 4)).astype(np.float32)
        bias = rng.standard_normal(2).astype(np.float32)
        assert np.allclose(T.linear(Tensor(a), Tensor(w), Tensor(bias)).data,
                           a @ w.T + bias, atol=1e-6)

    def test_gather(self):
        x = Tensor(np.arange(12, dtype=np.float32).reshape(3, 4))
        out = T.gather(x, [0, 5, 11])
        assert np.array_equal(out.data, [0, 5, 11])

    def test_stack_scalars(self):
        parts = [Tensor(np.asarray(float(i))) for i in range(3)]
        out = T.stack(parts)
        assert out.data.shape == (3,)
        assert np.array_equal(out.data, [0, 1, 2])

    def test_smooth_l1_spot_values(self):
        x = Tensor(np.array([0.5, 2.0, -0.5, -2.0]))
        out = T.smooth_l1(x).data
        assert out[0] == 0.125
        assert out[1] == 1.5
        assert out[2] == 0.125
        assert out[3] == 1.5

    def test_bce_spot_values(self):
        probs = Tensor(np.array([0.5]))
        out = T.bce_mean(probs, np.array([1.0]))
        assert abs(out.item() - math.log(2)) < 1e-6
        near_perfect = T.bce_mean(Tensor(np.array([1.0 - 1e-7, 1e-7])),
                                  np.array([1.0, 0.0]))
        assert near_perfect.item() < 1e-5

    def test_bilinear_sample_vs_oracle(self, rng):
        fmap = rng.standard_normal((3, 10, 12)).astype(np.float32)
        ys = rng.uniform(-2, 12, 40)
        xs = rng.uniform(-2, 14, 40)
        out = T.bilinear_sample(Tensor(fmap), ys, xs).data
        for k in range(40):
            ref = bilinear_oracle(fmap, ys[k], xs[k])
            assert np.max(np.abs(out[:, k] - ref)) < 1e-5

    def test_bilinear_linearity(self, rng):
        f = rng.standard_normal((2, 8, 8)).astype(np.float32)
        g = rng.standard_normal((2, 8, 8)).astype(np.float32)
        ys = rng.uniform(0, 8, 20)
        xs = rng.uniform(0, 8, 20)
        lhs = T.bilinear_sample(Tensor(2.0 * f + 3.0 * g), ys, xs).data
        rhs = 2.0 * T.bilinear_sample(Tensor(f), ys, xs).data \
            + 3.0 * T.bilinear_sample(Tensor(g), ys, xs).data
        assert np.max(np.abs(lhs - rhs)) < 1e-4


class TestBackwardContract:
    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            T.relu(x).backward()

    def test_linear_case(self, rng):
        xdata = rng.standard_normal(5).astype(np.float32)
        w = Tensor(np.asarray(2.0), requires_grad=True)
        loss = T.tensor_sum(T.mul(Tensor(xdata), w))
        loss.backward()
        assert np.allclose(w.grad, xdata.sum(), atol=1e-5)

    def test_gradients_accumulate(self):
        w = Tensor(np.asarray(3.0), requires_grad=True)
        T.mul(w, Tensor(np.asarray(2.0))).backward()
        first = w.grad.copy()
        T.mul(w, Tensor(np.asarray(2.0))).backward()
        assert np.allclose(w.grad, 2 * first)
        w.zero_grad()
        assert w.grad is None

    def test_unused_parameters_get_no_grad(self):
        used = Tensor(np.asarray(1.0), requires_grad=True)
        unused = Tensor(np.asarray(1.0), requires_grad=True)
        T.scale(used, 2.0).backward()
        assert used.grad is not None
        assert unused.grad is None

    def test_no_graph_without_requires_grad(self):
        x = Tensor(np.ones((2, 2)))
        out = T.relu(x)
        assert out._backward is None and out._parents == ()


class TestGradchecks:
    def test_add_sub_mul_scale(self, rng):
        a = Tensor(rng.standard_normal((3, 4)).astype(np.float32), requires_grad=True)
        b = Tensor(rng.standard_normal((3, 4)).astype(np.float32), requires_grad=True)
        wsum = rng.standard_normal((3, 4)).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.add(a, b), wsum), [a, b], rng)
        fd_gradcheck(lambda: weighted_sum(T.sub(a, b), wsum), [a, b], rng)
        fd_gradcheck(lambda: weighted_sum(T.mul(a, b), wsum), [a, b], rng)
        fd_gradcheck(lambda: weighted_sum(T.scale(a, -1.7), wsum), [a], rng)

    def test_broadcast_add(self, rng):
        a = Tensor(rng.standard_normal((3, 4)).astype(np.float32), requires_grad=True)
        b = Tensor(rng.standard_normal(4).astype(np.float32), requires_grad=True)
        wsum = rng.standard_normal((3, 4)).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.add(a, b), wsum), [a, b], rng)

    def test_matmul_linear(self, rng):
        a = Tensor(rng.standard_normal((3, 4)).astype(np.float32), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)).astype(np.float32), requires_grad=True)
        wsum = rng.standard_normal((3, 2)).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.matmul(a, b), wsum), [a, b], rng)
        w = Tensor(rng.standard_normal((2, 4)).astype(np.float32), requires_grad=True)
        bias = Tensor(rng.standard_normal(2).astype(np.float32), requires_grad=True)
        fd_gradcheck(lambda: weighted_sum(T.linear(a, w, bias), wsum), [a, w, bias], rng)

    def test_relu(self, rng):
        # keep values away from the kink so finite differences are valid
        data = rng.standard_normal((4, 4)).astype(np.float32)
        data[np.abs(data) < 0.05] = 0.1
        x = Tensor(data, requires_grad=True)
        wsum = rng.standard_normal((4, 4)).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.relu(x), wsum), [x], rng)

    def test_sigmoid_tanh(self, rng):
        x = Tensor(rng.standard_normal((3, 3)).astype(np.float32), requires_grad=True)
        wsum = rng.standard_normal((3, 3)).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.sigmoid(x), wsum), [x], rng)
        fd_gradcheck(lambda: weighted_sum(T.tanh(x), wsum), [x], rng)

    def test_conv2d(self, rng):
        x = Tensor(rng.standard_normal((2, 6, 6)).astype(np.float32), requires_grad=True)
        w = Tensor((rng.standard_normal((3, 2, 3, 3)) * 0.5).astype(np.float32),
                   requires_grad=True)
        b = Tensor(rng.standard_normal(3).astype(np.float32), requires_grad=True)
        wsum = rng.standard_normal((3, 6, 6)).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.conv2d(x, w, b, 1, 1), wsum), [x, w, b], rng)

    def test_conv2d_strided(self, rng):
        x = Tensor(rng.standard_normal((2, 8, 8)).astype(np.float32), requires_grad=True)
        w = Tensor((rng.standard_normal((2, 2, 3, 3)) * 0.5).astype(np.float32),
                   requires_grad=True)
        b = Tensor(rng.standard_normal(2).astype(np.float32), requires_grad=True)
        wsum = rng.standard_normal((2, 4, 4)).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.conv2d(x, w, b, 2, 1), wsum), [x, w, b], rng)

    def test_rect_kernel_conv(self, rng):
        x = Tensor(rng.standard_normal((2, 1, 9)).astype(np.float32), requires_grad=True)
        w = Tensor((rng.standard_normal((2, 2, 1, 3)) * 0.5).astype(np.float32),
                   requires_grad=True)
        b = Tensor(rng.standard_normal(2).astype(np.float32), requires_grad=True)
        wsum = rng.standard_normal((2, 1, 9)).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.conv2d(x, w, b, 1, (0, 1)), wsum),
                     [x, w, b], rng)

    def test_upsample_mean_sum(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 3)).astype(np.float32), requires_grad=True)
        wsum = rng.standard_normal((2, 6, 6)).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.upsample2x(x), wsum), [x], rng)
        fd_gradcheck(lambda: T.tensor_sum(x), [x], rng)
        fd_gradcheck(lambda: T.mean(x), [x], rng)
        wax = rng.standard_normal(2).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.mean(x, axis=(1, 2)), wax), [x], rng)

    def test_reshape_transpose_gather_stack(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 4)).astype(np.float32), requires_grad=True)
        w1 = rng.standard_normal(24).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.reshape(x, (24,)), w1), [x], rng)
        w2 = rng.standard_normal((4, 2, 3)).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.transpose(x, (2, 0, 1)), w2), [x], rng)
        w3 = rng.standard_normal(3).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.gather(x, [0, 7, 23]), w3), [x], rng)
        a = Tensor(rng.standard_normal(()).astype(np.float32), requires_grad=True)
        b = Tensor(rng.standard_normal(()).astype(np.float32), requires_grad=True)
        w4 = rng.standard_normal(2).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.stack([a, b]), w4), [a, b], rng)

    def test_bilinear_sample_grad(self, rng):
        fmap = Tensor(rng.standard_normal((2, 6, 6)).astype(np.float32),
                      requires_grad=True)
        ys = rng.uniform(0.5, 5.5, 9)
        xs = rng.uniform(0.5, 5.5, 9)
        wsum = rng.standard_normal((2, 9)).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.bilinear_sample(fmap, ys, xs), wsum),
                     [fmap], rng)

    def test_smooth_l1_grad(self, rng):
        data = rng.uniform(-3, 3, 16).astype(np.float32)
        data[np.abs(np.abs(data) - 1.0) < 0.05] = 0.5  # avoid the transition point
        x = Tensor(data, requires_grad=True)
        wsum = rng.standard_normal(16).astype(np.float32)
        fd_gradcheck(lambda: weighted_sum(T.smooth_l1(x), wsum), [x], rng)

    def test_bce_grad(self, rng):
        p = Tensor(rng.uniform(0.1, 0.9, 12).astype(np.float32), requires_grad=True)
        targets = (rng.uniform(0, 1, 12) > 0.5).astype(np.float32)
        fd_gradcheck(lambda: T.bce_mean(p, targets), [p], rng)
