"""Shared convolutional feature extractor and feature/descriptor utilities.

Feature maps are rank-3 tensors (c, h, w). A DescriptorSet is the same data
flattened to (c, l) with l = h * w in row-major order, keeping (h, w) around
so the flattening is invertible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, DimensionError, ValidationError
from .seeding import derive_rng


@dataclass
class DescriptorSet:
    """(c, l) view of a feature map plus the grid it came from."""

    data: Tensor
    height: int
    width: int

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        return self.data.shape[1]


def to_descriptors(fmap: Tensor) -> DescriptorSet:
    """Flatten (c, h, w) -> (c, h*w), row-major."""
    if fmap.data.ndim != 3:
        raise DimensionError("feature map must be (c, h, w), got %s" % (fmap.shape,))
    c, h, w = fmap.shape
    return DescriptorSet(ad.reshape(fmap, c, h * w), h, w)


def from_descriptors(x: Tensor, height: int, width: int) -> Tensor:
    """Inverse of to_descriptors; exact round-trip."""
    if x.data.ndim != 2:
        raise DimensionError("descriptor set must be (c, l), got %s" % (x.shape,))
    if x.shape[1] != height * width:
        raise DimensionError("descriptor count %d does not tile a %dx%d grid"
                             % (x.shape[1], height, width))
    return ad.reshape(x, x.shape[0], height, width)


def _he_conv(name: str, c_out: int, c_in: int, k: int, rng, dtype) -> Parameter:
    std = np.sqrt(2.0 / (c_in * k * k))
    w = rng.normal(0.0, std, size=(c_out, c_in, k, k)).astype(dtype)
    return Parameter(name, Tensor(w))


class Encoder:
    """Stack of 3x3 conv+relu blocks; blocks 2 and 4 use stride 2 (total /4)."""

    def __init__(self, in_channels: int, out_channels: int, width: int,
                 depth: int, seed: int, dtype=np.float32):
        if depth < 4:
            raise ConfigError("encoder depth must be >= 4 so both stride-2 "
                              "blocks exist, got %d" % depth)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.depth = depth
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        self.strides: list[int] = []
        c_prev = in_channels
        for i in range(depth):
            c_next = out_channels if i == depth - 1 else width
            stride = 2 if i in (1, 3) else 1
            rng = derive_rng(seed, "init", "encoder.block%d" % i)
            self.weights.append(_he_conv("encoder.block%d.weight" % i,
                                         c_next, c_prev, 3, rng, dtype))
            self.biases.append(Parameter("encoder.block%d.bias" % i,
                                         Tensor(np.zeros(c_next, dtype=dtype))))
            self.strides.append(stride)
            c_prev = c_next

    def parameters(self) -> list[Parameter]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def __call__(self, image: Tensor) -> Tensor:
        """(3, H, W) image -> (c, H/4, W/4) feature map."""
        if image.data.ndim != 3 or image.shape[0] != self.in_channels:
            raise DimensionError("encoder expects (%d, H, W), got %s"
                                 % (self.in_channels, image.shape))
        if image.shape[1] % 4 or image.shape[2] % 4:
            raise DimensionError("encoder input extents must be divisible by 4, "
                                 "got %s" % (image.shape,))
        x = image
        for w, b, s in zip(self.weights, self.biases, self.strides):
            x = ad.relu(ad.conv2d(x, w.value, b.value, stride=s))
        return x


def _check_binary(arr: np.ndarray, what: str) -> None:
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValidationError("%s must be binary (0/1 values only)" % what)


def mask_to_feature_grid(mask: Tensor, height: int, width: int) -> Tensor:
    """Downsample a binary (H, W) mask to (h, w) by mean pooling, then
    re-binarize at 0.5 with ties rounding up. Not differentiable."""
    if mask.data.ndim != 2:
        raise DimensionError("mask must be (H, W), got %s" % (mask.shape,))
    big_h, big_w = mask.shape
    if big_h % height or big_w % width:
        raise DimensionError("mask %s does not pool evenly onto a %dx%d grid"
                             % ((big_h, big_w), height, width))
    _check_binary(mask.data, "mask")
    fh, fw = big_h // height, big_w // width
    pooled = mask.data.reshape(height, fh, width, fw).mean(axis=(1, 3))
    return Tensor((pooled >= 0.5).astype(mask.data.dtype))


def apply_mask(fmap: Tensor, grid: Tensor) -> Tensor:
    """Zero background positions of a (c, h, w) map with an (h, w) binary grid."""
    if grid.data.ndim != 2 or fmap.data.ndim != 3 or fmap.shape[1:] != grid.shape:
        raise DimensionError("grid %s does not match feature map %s"
                             % (grid.shape, fmap.shape))
    _check_binary(grid.data, "feature grid")
    return ad.mul(fmap, ad.reshape(grid, 1, *grid.shape))


def kshot_average(features: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of K same-shape tensors."""
    feats = list(features)
    if not feats:
        raise DimensionError("kshot_average over an empty sequence")
    shape = feats[0].shape
    for f in feats[1:]:
        if f.shape != shape:
            raise DimensionError("kshot_average shape mismatch: %s vs %s"
                                 % (shape, f.shape))
    total = feats[0]
    for f in feats[1:]:
        total = ad.add(total, f)
    return ad.mul(total, 1.0 / len(feats))
