"""Feature-space excitation of query descriptors by support guidance.

The support foreground is average-pooled into one guidance vector that gates
the query channel-wise. The gated map then passes channel and spatial
attention. Optionally an edge route concatenates the global query/support
descriptor cosine field and fuses it back down to c channels.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .encoder import DescriptorSet, from_descriptors
from .errors import ConfigError, DegenerateEpisodeError, DimensionError, ValidationError
from .reasoning import COSINE_EPS, NORM_SQ_EPS
from .seeding import derive_rng


def masked_avg_pool(x: DescriptorSet, grid: Tensor, divide_by_l: bool = False) -> Tensor:
    """Average foreground descriptors into a (c, 1) guidance vector.

    The sum is divided by the foreground cell count; divide_by_l swaps the
    divisor for the full descriptor count l.
    """
    if grid.data.ndim != 2 or grid.data.size != x.count:
        raise DimensionError("grid %s does not match descriptor count %d"
                             % (grid.shape, x.count))
    if not np.all((grid.data == 0.0) | (grid.data == 1.0)):
        raise ValidationError("feature grid must be binary")
    fg = float(grid.data.sum())
    if fg == 0.0:
        raise DegenerateEpisodeError("support mask has no foreground at feature "
                                     "resolution")
    flat = ad.reshape(grid, 1, x.count)
    summed = ad.tensor_sum(ad.mul(x.data, flat), axis=1, keepdims=True)
    divisor = float(x.count) if divide_by_l else fg
    return ad.mul(summed, 1.0 / divisor)


def guide(pooled: Tensor, x_q: DescriptorSet) -> Tensor:
    """Gate query descriptors channel-wise by the guidance vector."""
    if pooled.shape != (x_q.channels, 1):
        raise DimensionError("guidance must be (c, 1), got %s" % (pooled.shape,))
    return ad.mul(x_q.data, pooled)


def edge_similarity(x_q: DescriptorSet, x_s: DescriptorSet) -> Tensor:
    """Cosine similarity between every query/support descriptor pair,
    shaped (l_q, l_s). Zero descriptors (masked background) score 0, and the
    floored norms keep their gradients finite instead of inf * 0."""
    if x_q.channels != x_s.channels:
        raise DimensionError("descriptor channel mismatch: %d vs %d"
                             % (x_q.channels, x_s.channels))
    inner = ad.matmul(ad.transpose(x_q.data), x_s.data)
    nq = ad.power(ad.clamp(ad.tensor_sum(ad.mul(x_q.data, x_q.data),
                                         axis=0, keepdims=True),
                           lo=NORM_SQ_EPS), 0.5)
    ns = ad.power(ad.clamp(ad.tensor_sum(ad.mul(x_s.data, x_s.data),
                                         axis=0, keepdims=True),
                           lo=NORM_SQ_EPS), 0.5)
    denom = ad.matmul(ad.transpose(nq), ns)
    return ad.mul(inner, ad.power(ad.clamp(denom, lo=COSINE_EPS), -1.0))


class FeatureExcitation:
    """Channel + spatial attention over guided query descriptors, with an
    optional global-edge fusion route."""

    def __init__(self, channels: int, reduction: int, descriptor_count: int,
                 edge_fusion: bool, seed: int, dtype=np.float32,
                 spatial_kernel: int = 7):
        if channels % reduction:
            raise ConfigError("channels (%d) must divide by the reduction "
                              "ratio (%d)" % (channels, reduction))
        self.channels = channels
        self.hidden = channels // reduction
        self.descriptor_count = descriptor_count
        self.edge_fusion = edge_fusion

        def dense(name, rows, cols, rng):
            w = rng.normal(0.0, np.sqrt(2.0 / cols), size=(rows, cols)).astype(dtype)
            return (Parameter(name + ".weight", Tensor(w)),
                    Parameter(name + ".bias", Tensor(np.zeros((rows, 1), dtype=dtype))))

        rng = derive_rng(seed, "init", "excitation.squeeze")
        self.squeeze_w, self.squeeze_b = dense("excitation.squeeze",
                                               self.hidden, channels, rng)
        rng = derive_rng(seed, "init", "excitation.expand")
        self.expand_w, self.expand_b = dense("excitation.expand",
                                             channels, self.hidden, rng)
        rng = derive_rng(seed, "init", "excitation.spatial")
        k = spatial_kernel
        std = np.sqrt(2.0 / (channels * k * k))
        w = rng.normal(0.0, std, size=(1, channels, k, k)).astype(dtype)
        self.spatial_w = Parameter("excitation.spatial.weight", Tensor(w))
        self.spatial_b = Parameter("excitation.spatial.bias",
                                   Tensor(np.zeros(1, dtype=dtype)))
        if edge_fusion:
            rng = derive_rng(seed, "init", "excitation.fuse_edges")
            c_in = channels + descriptor_count
            w = rng.normal(0.0, np.sqrt(2.0 / c_in),
                           size=(channels, c_in, 1)).astype(dtype)
            self.fuse_w = Parameter("excitation.fuse_edges.weight", Tensor(w))
            self.fuse_b = Parameter("excitation.fuse_edges.bias",
                                    Tensor(np.zeros(channels, dtype=dtype)))

    def parameters(self) -> list[Parameter]:
        out = [self.squeeze_w, self.squeeze_b, self.expand_w, self.expand_b,
               self.spatial_w, self.spatial_b]
        if self.edge_fusion:
            out.extend([self.fuse_w, self.fuse_b])
        return out

    def channel_attention(self, p: Tensor) -> Tensor:
        """Bottleneck over the pooled channel vector; sigmoid gate on (c, l).
        All-zero weights reduce to scaling by one half."""
        if p.data.ndim != 2 or p.shape[0] != self.channels:
            raise DimensionError("expected (c, l) with c=%d, got %s"
                                 % (self.channels, p.shape))
        pooled = ad.avg_pool_global(p)
        h = ad.relu(ad.add(ad.matmul(self.squeeze_w.value, pooled),
                           self.squeeze_b.value))
        gate = ad.sigmoid(ad.add(ad.matmul(self.expand_w.value, h),
                                 self.expand_b.value))
        return ad.mul(p, gate)

    def spatial_attention(self, p: Tensor, height: int, width: int) -> Tensor:
        """Single-channel conv gate over the (h, w) layout of p."""
        grid = from_descriptors(p, height, width)
        gate = ad.sigmoid(ad.conv2d(grid, self.spatial_w.value, self.spatial_b.value))
        return ad.reshape(ad.mul(grid, gate), self.channels, height * width)

    def fuse_edges(self, p_e: Tensor, d: Tensor) -> Tensor:
        """Concatenate the edge field below the excited descriptors and mix
        back down to c channels with a pointwise conv."""
        if not self.edge_fusion:
            raise ConfigError("edge fusion route was disabled at construction")
        if d.shape != (self.descriptor_count, p_e.shape[1]):
            raise DimensionError("edge field %s does not match descriptors %s"
                                 % (d.shape, p_e.shape))
        stacked = ad.concat([p_e, d], axis=0)
        return ad.conv1d(stacked, self.fuse_w.value, self.fuse_b.value)

    def __call__(self, x_s: DescriptorSet, support_grid: Tensor,
                 x_q: DescriptorSet, divide_by_l: bool = False) -> Tensor:
        pooled = masked_avg_pool(x_s, support_grid, divide_by_l=divide_by_l)
        excited = self.channel_attention(guide(pooled, x_q))
        excited = self.spatial_attention(excited, x_q.height, x_q.width)
        if self.edge_fusion:
            return self.fuse_edges(excited, edge_similarity(x_q, x_s))
        return excited
