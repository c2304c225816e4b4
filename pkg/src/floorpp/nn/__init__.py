"""Minimal float32 tensor library with reverse-mode autodiff, plus the
pillar network (encoder-decoder backbone, corner and edge heads) built on it."""

from .tensor import (  # noqa: F401
    Tensor,
    add,
    bce_mean,
    bilinear_sample,
    conv2d,
    gather,
    linear,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    smooth_l1,
    stack,
    sub,
    tensor_sum,
    tanh,
    transpose,
    upsample2x,
)
from .network import (  # noqa: F401
    NetworkConfig,
    PillarNet,
    RoIBox,
    load_checkpoint,
    roi_align,
    save_checkpoint,
)
