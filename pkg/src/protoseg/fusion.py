"""Fusion segmentation head: merge the two descriptor branches, refine with
residual conv blocks, classify per cell, and upsample to image resolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import DimensionError, ValidationError
from .seeding import derive_rng

CLAMP_EPS = 1e-7


def bilinear_matrix(dst: int, src: int, dtype=np.float64) -> np.ndarray:
    """(dst, src) interpolation weights; each row sums to 1 exactly for the
    edge rows and to within an ulp elsewhere. Half-pixel centers, edges clamp."""
    m = np.zeros((dst, src), dtype=dtype)
    scale = src / dst
    for i in range(dst):
        s = (i + 0.5) * scale - 0.5
        if s <= 0.0:
            m[i, 0] = 1.0
        elif s >= src - 1:
            m[i, src - 1] = 1.0
        else:
            i0 = int(np.floor(s))
            lam = s - i0
            m[i, i0] = 1.0 - lam
            m[i, i0 + 1] = lam
    return m


@dataclass
class SegMask:
    """Dense segmentation output at image resolution."""

    logits: Tensor
    probabilities: Tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.logits.shape

    def binary(self, threshold: float = 0.5) -> Tensor:
        return binarize(self.probabilities, threshold)


def binarize(probabilities: Tensor, threshold: float = 0.5) -> Tensor:
    """Threshold probabilities; ties go to foreground. Not differentiable."""
    p = probabilities.data
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValidationError("probabilities must lie in [0, 1]")
    return Tensor((p >= threshold).astype(p.dtype))


def bce_loss(pred: SegMask, target: Tensor) -> Tensor:
    """Mean binary cross-entropy over pixels, probabilities clamped to
    [eps, 1-eps] so saturated outputs keep a finite loss."""
    if pred.probabilities.shape != target.shape:
        raise DimensionError("prediction %s and target %s differ"
                             % (pred.probabilities.shape, target.shape))
    if not np.all((target.data == 0.0) | (target.data == 1.0)):
        raise ValidationError("target mask must be binary")
    p = ad.clamp(pred.probabilities, CLAMP_EPS, 1.0 - CLAMP_EPS)
    ll = target * p.log() + (1.0 - target) * (1.0 - p).log()
    return ad.mul(ad.tensor_mean(ll), -1.0)


class FusionHead:
    """Two residual 3x3 blocks over the concatenated branches, a pointwise
    classifier, and bilinear upsampling back to image resolution."""

    def __init__(self, channels: int, grid_h: int, grid_w: int,
                 out_h: int, out_w: int, seed: int, dtype=np.float32):
        self.channels = channels
        self.grid_h, self.grid_w = grid_h, grid_w
        self.out_h, self.out_w = out_h, out_w
        c2 = 2 * channels
        self.convs: list[tuple[Parameter, Parameter]] = []
        for i in range(4):  # two blocks, two convs each
            rng = derive_rng(seed, "init", "fusion.res%d" % i)
            std = np.sqrt(2.0 / (c2 * 9))
            # Second conv of each block starts at zero: blocks begin as the
            # identity, which keeps activation scale seed-independent.
            if i % 2:
                w = np.zeros((c2, c2, 3, 3), dtype=dtype)
            else:
                w = rng.normal(0.0, std, size=(c2, c2, 3, 3)).astype(dtype)
            self.convs.append((Parameter("fusion.res%d.weight" % i, Tensor(w)),
                               Parameter("fusion.res%d.bias" % i,
                                         Tensor(np.zeros(c2, dtype=dtype)))))
        # Zero classifier: every run opens at probability 0.5 per pixel, so
        # the first loss is ln 2 and no seed starts saturated.
        self.cls_w = Parameter("fusion.cls.weight",
                               Tensor(np.zeros((1, c2, 1, 1), dtype=dtype)))
        self.cls_b = Parameter("fusion.cls.bias", Tensor(np.zeros(1, dtype=dtype)))
        self.rows = Tensor(bilinear_matrix(out_h, grid_h, dtype))
        self.cols = Tensor(bilinear_matrix(out_w, grid_w, dtype))

    def parameters(self) -> list[Parameter]:
        out = []
        for w, b in self.convs:
            out.extend([w, b])
        out.extend([self.cls_w, self.cls_b])
        return out

    def __call__(self, main: Tensor, aux: Tensor) -> SegMask:
        if main.shape != aux.shape or main.shape != (self.channels,
                                                     self.grid_h * self.grid_w):
            raise DimensionError("branch shapes %s / %s do not match head "
                                 "geometry (c=%d, l=%d)"
                                 % (main.shape, aux.shape, self.channels,
                                    self.grid_h * self.grid_w))
        x = ad.reshape(ad.concat([main, aux], axis=0),
                       2 * self.channels, self.grid_h, self.grid_w)
        for i in (0, 2):
            wa, ba = self.convs[i]
            wb, bb = self.convs[i + 1]
            inner = ad.conv2d(ad.relu(ad.conv2d(x, wa.value, ba.value)),
                              wb.value, bb.value)
            x = ad.add(x, inner)
        logits_grid = ad.conv2d(x, self.cls_w.value, self.cls_b.value)
        logits_grid = ad.reshape(logits_grid, self.grid_h, self.grid_w)
        logits = ad.matmul(ad.matmul(self.rows, logits_grid),
                           ad.transpose(self.cols))
        return SegMask(logits=logits, probabilities=ad.sigmoid(logits))
