"""Graph reasoning over local-descriptor prototypes.

Support and query descriptor sets are projected to r prototypes along two
routes (a node route and a channel route), crossed into relation matrices,
fused to one r x r relation map, and refined by a small graph convolution
whose adjacency is the relu-cosine similarity between relation rows. The
refined relations then re-weight the query prototypes and are reflected back
to feature space as a residual on the query descriptors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .encoder import DescriptorSet, from_descriptors
from .errors import ConfigError, DimensionError, ValidationError
from .seeding import derive_rng

STANDARDIZE_EPS = 1e-5

# Zero vectors must score cosine 0 with finite gradients: the squared norms
# are floored before the square root (else its backward is inf at 0) and the
# norm product is floored before dividing. Clamping only ever shrinks the
# magnitude, so |cos| <= 1 still holds.
NORM_SQ_EPS = 1e-16
COSINE_EPS = 1e-8


@dataclass
class PrototypePair:
    """Projections of one descriptor set along the two routes, each (r, l)."""

    node: Tensor
    channel: Tensor


def _cosine_rows(g: Tensor) -> Tensor:
    """Pairwise cosine similarity between rows; zero rows score 0, not NaN."""
    inner = ad.matmul(g, ad.transpose(g))
    sq = ad.clamp(ad.tensor_sum(ad.mul(g, g), axis=1, keepdims=True),
                  lo=NORM_SQ_EPS)
    norms = ad.power(sq, 0.5)                      # (r, 1)
    denom = ad.matmul(norms, ad.transpose(norms))  # (r, r)
    return ad.mul(inner, ad.power(ad.clamp(denom, lo=COSINE_EPS), -1.0))


def build_adjacency(g: Tensor) -> Tensor:
    """relu(cosine) between relation rows, zero diagonal, exactly symmetric."""
    if g.data.ndim != 2:
        raise DimensionError("adjacency input must be rank 2, got %s" % (g.shape,))
    r = g.shape[0]
    sim = ad.relu(_cosine_rows(g))
    hollow = Tensor(1.0 - np.eye(r, dtype=g.data.dtype))
    masked = ad.mul(sim, hollow)
    # Cosine is symmetric mathematically; enforce it bitwise.
    return ad.mul(ad.add(masked, ad.transpose(masked)), 0.5)


def normalized_laplacian(a: Tensor) -> Tensor:
    """D^-1/2 (A + I) D^-1/2 with D the degree of A + I.

    Self-loops keep every degree >= 1, so isolated nodes stay well defined
    and an all-zero adjacency maps to the identity exactly.
    """
    if a.data.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("adjacency must be square, got %s" % (a.shape,))
    if np.any(a.data < 0):
        raise ValidationError("adjacency entries must be nonnegative")
    if not np.allclose(a.data, a.data.T, atol=1e-8):
        raise ValidationError("adjacency must be symmetric")
    r = a.shape[0]
    eye = Tensor(np.eye(r, dtype=a.data.dtype))
    a_tilde = ad.add(a, eye)
    degree = ad.tensor_sum(a_tilde, axis=1, keepdims=True)   # (r, 1)
    inv_sqrt = ad.power(degree, -0.5)
    return ad.mul(ad.mul(a_tilde, inv_sqrt), ad.transpose(inv_sqrt))


def gcn_forward(h: Tensor, lap: Tensor, thetas: list[Tensor]) -> Tensor:
    """Stacked propagation layers: H <- relu(L H theta). No biases."""
    for theta in thetas:
        h = ad.relu(ad.matmul(ad.matmul(lap, h), theta))
    return h


class GraphReasoning:
    """Parameterized branch: project, relate, propagate, reflect."""

    def __init__(self, channels: int, proto_dim: int, gcn_depth: int,
                 seed: int, dtype=np.float32):
        if proto_dim < 2:
            raise ConfigError("proto_dim must be >= 2, got %d" % proto_dim)
        if gcn_depth < 1:
            raise ConfigError("gcn_depth must be >= 1, got %d" % gcn_depth)
        self.channels = channels
        self.proto_dim = proto_dim
        c, r = channels, proto_dim

        def conv1_param(name, c_out, c_in):
            rng = derive_rng(seed, "init", name)
            std = np.sqrt(2.0 / c_in)
            w = rng.normal(0.0, std, size=(c_out, c_in, 1)).astype(dtype)
            return (Parameter(name + ".weight", Tensor(w)),
                    Parameter(name + ".bias", Tensor(np.zeros(c_out, dtype=dtype))))

        self.node_w, self.node_b = conv1_param("reasoning.project_node", r, c)
        self.channel_w, self.channel_b = conv1_param("reasoning.project_channel", r, c)
        self.fuse_w, self.fuse_b = conv1_param("reasoning.fuse_relations", r, 2 * r)
        self.thetas = []
        for i in range(gcn_depth):
            rng = derive_rng(seed, "init", "reasoning.gcn%d" % i)
            w = rng.normal(0.0, np.sqrt(2.0 / r), size=(r, r)).astype(dtype)
            self.thetas.append(Parameter("reasoning.gcn%d.weight" % i, Tensor(w)))
        rng = derive_rng(seed, "init", "reasoning.reflect")
        std = np.sqrt(2.0 / (r * 9))
        w = rng.normal(0.0, std, size=(c, r, 3, 3)).astype(dtype)
        self.reflect_w = Parameter("reasoning.reflect.weight", Tensor(w))
        self.reflect_b = Parameter("reasoning.reflect.bias",
                                   Tensor(np.zeros(c, dtype=dtype)))

    def parameters(self) -> list[Parameter]:
        return ([self.node_w, self.node_b, self.channel_w, self.channel_b,
                 self.fuse_w, self.fuse_b]
                + self.thetas
                + [self.reflect_w, self.reflect_b])

    def project(self, x: DescriptorSet) -> PrototypePair:
        """(c, l) descriptors -> two (r, l) prototype sets."""
        if x.channels != self.channels:
            raise DimensionError("descriptor channels %d do not match branch "
                                 "width %d" % (x.channels, self.channels))
        node = ad.conv1d(x.data, self.node_w.value, self.node_b.value)
        channel = ad.conv1d(x.data, self.channel_w.value, self.channel_b.value)
        return PrototypePair(node=node, channel=channel)

    def relation_matrices(self, support: PrototypePair,
                          query: PrototypePair) -> Tensor:
        """Cross the two routes and fuse the stacked pair down to (r, r)."""
        if support.node.shape != query.node.shape:
            raise DimensionError("support/query prototype shapes differ: %s vs %s"
                                 % (support.node.shape, query.node.shape))
        g_node = ad.matmul(query.node, ad.transpose(support.channel))
        g_channel = ad.matmul(query.channel, ad.transpose(support.node))
        stacked = ad.concat([g_node, ad.transpose(g_channel)], axis=0)  # (2r, r)
        return ad.conv1d(stacked, self.fuse_w.value, self.fuse_b.value)

    def reflect(self, relations: Tensor, query_node: Tensor,
                x_q: DescriptorSet) -> Tensor:
        """Re-weight query prototypes by the refined relations, map back to
        c channels, standardize per channel, add onto the query descriptors."""
        weighted = ad.matmul(relations, query_node)            # (r, l)
        grid = from_descriptors(weighted, x_q.height, x_q.width)
        mapped = ad.conv2d(grid, self.reflect_w.value, self.reflect_b.value)
        mu = ad.tensor_mean(mapped, axis=(1, 2), keepdims=True)
        centered = ad.add(mapped, ad.mul(mu, -1.0))
        var = ad.tensor_mean(ad.mul(centered, centered), axis=(1, 2), keepdims=True)
        standardized = ad.mul(centered, ad.power(ad.add(var, STANDARDIZE_EPS), -0.5))
        flat = ad.reshape(standardized, self.channels, x_q.count)
        return ad.add(x_q.data, flat)

    def __call__(self, x_s: DescriptorSet, x_q: DescriptorSet) -> Tensor:
        support = self.project(x_s)
        query = self.project(x_q)
        g = self.relation_matrices(support, query)
        lap = normalized_laplacian(build_adjacency(g))
        refined = gcn_forward(g, lap, [t.value for t in self.thetas])
        return self.reflect(refined, query.node, x_q)
