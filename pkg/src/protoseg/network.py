"""Whole-model assembly: encoder, optional branches, fusion head.

Either branch can be switched off; a disabled branch's slot in the fusion
head is filled with the raw query descriptors, so the head geometry never
changes and ablation rows stay weight-compatible where modules are shared.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .config import Config
from .encoder import (DescriptorSet, Encoder, apply_mask, kshot_average,
                      mask_to_feature_grid, to_descriptors)
from .episodes import Episode
from .errors import DegenerateEpisodeError, DimensionError
from .excitation import FeatureExcitation
from .fusion import FusionHead, SegMask, bce_loss
from .reasoning import GraphReasoning


class FewShotSegmenter:
    """1-way K-shot segmentation network driven by a Config."""

    def __init__(self, config: Config, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        self.grid_size = config.image_size // 4
        l = self.grid_size * self.grid_size
        seed = config.seed
        self.encoder = Encoder(3, config.channels, config.encoder_width,
                               config.encoder_depth, seed, dtype)
        self.reasoning = (GraphReasoning(config.channels, config.proto_dim,
                                         config.gcn_depth, seed, dtype)
                          if config.graph_reasoning else None)
        self.excitation = (FeatureExcitation(config.channels, config.reduction,
                                             l, config.edge_fusion, seed, dtype)
                           if config.excitation else None)
        self.head = FusionHead(config.channels, self.grid_size, self.grid_size,
                               config.image_size, config.image_size, seed, dtype)

    # -- parameter bookkeeping ----------------------------------------------

    def parameters(self) -> list[Parameter]:
        params = list(self.encoder.parameters())
        if self.reasoning is not None:
            params.extend(self.reasoning.parameters())
        if self.excitation is not None:
            params.extend(self.excitation.parameters())
        params.extend(self.head.parameters())
        return params

    def parameter_dict(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for p in self.parameters():
            if p.name in out:
                raise DimensionError("duplicate parameter name %r" % p.name)
            out[p.name] = p
        return out

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def module_parameter_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for p in self.parameters():
            module = p.name.split(".", 1)[0]
            counts[module] = counts.get(module, 0) + p.data.size
        return counts

    def load_parameter_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameter_dict()
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise DimensionError("parameter sets differ (missing %s, extra %s)"
                                 % (missing, extra))
        for name, p in params.items():
            arr = arrays[name]
            if arr.shape != p.data.shape:
                raise DimensionError("parameter %r shape %s does not match %s"
                                     % (name, arr.shape, p.data.shape))
            p.value.data = arr.astype(self.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- forward -------------------------------------------------------------

    def _as_tensor(self, t: Tensor) -> Tensor:
        if t.data.dtype != self.dtype:
            return Tensor(t.data.astype(self.dtype))
        return t

    def encode_support(self, episode: Episode) -> tuple[DescriptorSet, Tensor]:
        """K-averaged masked support descriptors plus the union feature grid."""
        masked = []
        grids = []
        for img, msk in zip(episode.support_images, episode.support_masks):
            fmap = self.encoder(self._as_tensor(img))
            grid = mask_to_feature_grid(self._as_tensor(msk),
                                        self.grid_size, self.grid_size)
            masked.append(apply_mask(fmap, grid))
            grids.append(grid.data)
        union = Tensor(np.clip(np.sum(grids, axis=0), 0.0, 1.0).astype(self.dtype))
        if not np.any(union.data):
            raise DegenerateEpisodeError("support masks vanish at feature "
                                         "resolution (episode seed %d)"
                                         % episode.seed)
        return to_descriptors(kshot_average(masked)), union

    def forward(self, episode: Episode) -> SegMask:
        # K is free at inference; config.k_shot only steers episode sampling.
        x_q = to_descriptors(self.encoder(self._as_tensor(episode.query_image)))
        x_s, union_grid = self.encode_support(episode)
        main = (self.reasoning(x_s, x_q) if self.reasoning is not None
                else x_q.data)
        if self.excitation is not None:
            aux = self.excitation(x_s, union_grid, x_q,
                                  divide_by_l=self.config.pool_divide_by_l)
        else:
            aux = x_q.data
        return self.head(main, aux)

    def episode_loss(self, episode: Episode) -> tuple[Tensor, SegMask]:
        pred = self.forward(episode)
        loss = bce_loss(pred, self._as_tensor(episode.query_mask))
        return loss, pred

    __call__ = forward
