"""Training, evaluation, ablation, gradient auditing, and model reports."""

from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor, grad_check
from .config import Config, config_from_dict
from .encoder import DescriptorSet
from .episodes import (FoldSplit, default_classes, make_folds, sample_episode)
from .errors import ConfigError, FormatError, TrainingError
from .fusion import bce_loss
from .metrics import EvalReport, fb_iou, iou, miou
from .network import FewShotSegmenter
from .seeding import derive_rng, derive_seed
from .storage import read_checkpoint, write_checkpoint

CHECKPOINT_FORMAT = "protoseg-checkpoint"

ABLATION_ROWS: tuple[tuple[str, dict], ...] = (
    ("reasoning", dict(graph_reasoning=True, excitation=False, edge_fusion=False)),
    ("excitation", dict(graph_reasoning=False, excitation=True, edge_fusion=False)),
    ("excitation+edges", dict(graph_reasoning=False, excitation=True, edge_fusion=True)),
    ("reasoning+excitation", dict(graph_reasoning=True, excitation=True, edge_fusion=False)),
    ("reasoning+excitation+edges", dict(graph_reasoning=True, excitation=True, edge_fusion=True)),
    ("baseline", dict(graph_reasoning=False, excitation=False, edge_fusion=False)),
)


class SGD:
    """Stochastic gradient descent with classical momentum."""

    def __init__(self, params: Sequence[Parameter], learning_rate: float,
                 momentum: float = 0.0):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p, v in zip(self.params, self.velocities):
            v *= self.momentum
            v += p.grad
            p.value.data -= self.learning_rate * v


def default_split(config: Config) -> FoldSplit:
    ids = [c.class_id for c in default_classes()]
    return make_folds(ids, config.seed, config.fold)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, net: FewShotSegmenter, epoch: int,
                    episodes_consumed: int) -> Path:
    params = net.parameters()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "epoch": epoch,
        "config": net.config.to_dict(),
        "rng": {"scheme": "seed-path", "root_seed": net.config.seed,
                "train_episodes_consumed": episodes_consumed},
        "parameters": [p.name for p in params],
    }
    arrays = {p.name: p.data for p in params}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_checkpoint(path, header, arrays)
    return path


def load_network(path, dtype=np.float32) -> tuple[FewShotSegmenter, dict]:
    header, arrays = read_checkpoint(path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise FormatError("format: expected %r, found %r"
                          % (CHECKPOINT_FORMAT, header.get("format")))
    config = config_from_dict(header["config"])
    net = FewShotSegmenter(config, dtype)
    net.load_parameter_arrays(arrays)
    return net, header


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    network: FewShotSegmenter
    losses: list[float]            # one entry per training episode, in order
    checkpoints: list[Path]
    split: FoldSplit


def train(config: Config, out_dir=None,
          progress: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Episodic training: two episodes per optimizer step via gradient
    accumulation, one checkpoint per epoch when out_dir is given."""
    config.validate()
    net = FewShotSegmenter(config)
    split = default_split(config)
    opt = SGD(net.parameters(), config.learning_rate, config.momentum)
    losses: list[float] = []
    checkpoints: list[Path] = []
    episode_index = 0
    for epoch in range(config.epochs):
        epoch_losses = []
        remaining = config.episodes_per_epoch
        while remaining:
            batch = min(2, remaining)
            remaining -= batch
            opt.zero_grad()
            for _ in range(batch):
                ep_seed = derive_seed(config.seed, "train", episode_index)
                episode = sample_episode(split, "train", config.k_shot,
                                         ep_seed, config.image_size)
                with Tape() as tape:
                    loss, _ = net.episode_loss(episode)
                    scaled = ad.mul(loss, 1.0 / batch)
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingError(
                        "non-finite loss at training episode %d (episode "
                        "seed %d, epoch %d)" % (episode_index, ep_seed, epoch))
                ad.backward(tape, scaled)
                losses.append(value)
                epoch_losses.append(value)
                episode_index += 1
            opt.step()
        if out_dir is not None:
            path = Path(out_dir) / ("checkpoint-epoch%03d.ckpt" % epoch)
            checkpoints.append(save_checkpoint(path, net, epoch, episode_index))
        if progress is not None:
            progress(epoch, float(np.mean(epoch_losses)))
    return TrainResult(network=net, losses=losses, checkpoints=checkpoints,
                       split=split)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(source: Union[str, os.PathLike, FewShotSegmenter],
             fold: Optional[int] = None, k: Optional[int] = None,
             episodes: int = 60, seed: Optional[int] = None,
             predict_fn: Optional[Callable] = None) -> EvalReport:
    """Run frozen-weight inference over held-fold episodes.

    predict_fn(episode) -> binary mask is an override hook for the default
    forward + threshold path (used by metric plumbing checks).
    """
    if isinstance(source, FewShotSegmenter):
        net = source
    else:
        net, _ = load_network(source)
    cfg = net.config
    if fold is None:
        fold = cfg.fold
    if fold != cfg.fold:
        raise ConfigError(
            "these weights held out fold %d; evaluating fold %d would mix "
            "training classes into the test set" % (cfg.fold, fold))
    if k is None:
        k = cfg.k_shot
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    eval_seed = cfg.seed if seed is None else seed
    split = default_split(cfg)
    per_class: dict[int, list[float]] = defaultdict(list)
    pairs: list[tuple[int, float]] = []
    fbs: list[float] = []
    loss_values: list[float] = []
    for i in range(episodes):
        ep = sample_episode(split, "test", k, derive_seed(eval_seed, "eval", i),
                            cfg.image_size)
        if predict_fn is not None:
            pred = predict_fn(ep)
            if not isinstance(pred, Tensor):
                pred = Tensor(np.asarray(pred))
        else:
            seg = net.forward(ep)
            loss_values.append(bce_loss(seg, net._as_tensor(ep.query_mask)).item())
            pred = seg.binary()
        score = iou(pred, ep.query_mask)
        pairs.append((ep.class_id, score))
        per_class[ep.class_id].append(score)
        fbs.append(fb_iou(pred, ep.query_mask))
    return EvalReport(
        fold=fold, k_shot=k, episodes=episodes,
        miou=miou(pairs, split.test_class_ids),
        fb_iou=float(np.mean(fbs)),
        parameter_count=net.parameter_count(),
        per_class_iou={c: float(np.mean(v)) for c, v in per_class.items()},
        mean_loss=float(np.mean(loss_values)) if loss_values else float("nan"),
    )


# ---------------------------------------------------------------------------
# ablation


def ablate(config: Config, eval_episodes: int = 60, out_dir=None,
           progress: Optional[Callable[[str, dict], None]] = None) -> list[dict]:
    """Train and evaluate the six branch-toggle combinations under shared
    seeds, fold split, and episode streams."""
    config.validate()
    rows = []
    for label, toggles in ABLATION_ROWS:
        row_config = config.with_overrides(**toggles)
        row_dir = Path(out_dir) / label.replace("+", "_") if out_dir else None
        result = train(row_config, out_dir=row_dir)
        report = evaluate(result.network, fold=row_config.fold,
                          k=row_config.k_shot, episodes=eval_episodes,
                          seed=derive_seed(config.seed, "ablate-eval"))
        row = {
            "row": label,
            "graph_reasoning": toggles["graph_reasoning"],
            "excitation": toggles["excitation"],
            "edge_fusion": toggles["edge_fusion"],
            "miou": report.miou,
            "fb_iou": report.fb_iou,
            "parameter_count": report.parameter_count,
            "final_epoch_loss": float(np.mean(
                result.losses[-row_config.episodes_per_epoch:])),
        }
        rows.append(row)
        if progress is not None:
            progress(label, row)
    return rows


def render_ablation(rows: list[dict]) -> str:
    import json
    lines = []
    for row in rows:
        lines.append("row = %s" % row["row"])
        for key in ("miou", "fb_iou", "final_epoch_loss"):
            lines.append("%s = %.6f" % (key, row[key]))
        lines.append("parameter_count = %d" % row["parameter_count"])
        lines.append("")
    lines.append("json = %s" % json.dumps(rows, sort_keys=True))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# gradient audit


def _random_descriptors(channels: int, grid: int, seed: int, tag: str) -> DescriptorSet:
    rng = derive_rng(seed, "gradcheck", tag)
    data = rng.normal(0.0, 1.0, size=(channels, grid * grid))
    return DescriptorSet(Tensor(data.astype(np.float64)), grid, grid)


def gradcheck_model(config: Config, eps: float = 1e-6,
                    max_coords_per_param: int = 8) -> dict[str, float]:
    """Worst relative gradient error per module and for the full pipeline,
    measured in float64 on a small 1-shot episode."""
    toy = config.with_overrides(image_size=16, channels=8, proto_dim=4,
                                encoder_width=4, encoder_depth=4, reduction=4,
                                k_shot=1, graph_reasoning=True,
                                excitation=True, edge_fusion=True)
    net = FewShotSegmenter(toy, dtype=np.float64)
    # Zero-initialized layers would make most pipeline gradients trivially
    # zero; audit at a generic point in weight space instead.
    for i, p in enumerate(net.parameters()):
        rng = derive_rng(toy.seed, "gradcheck", "weights", i)
        p.value.data = rng.normal(0.0, 0.1, size=p.data.shape)
    split = default_split(toy)
    episode = sample_episode(split, "train", 1,
                             derive_seed(toy.seed, "gradcheck-episode"), 16)
    grid = net.grid_size
    results: dict[str, float] = {}

    image = Tensor(episode.query_image.data.astype(np.float64))

    def encoder_scalar():
        out = net.encoder(image)
        return ad.tensor_mean(ad.mul(out, out))

    results["encoder"] = grad_check(
        encoder_scalar, net.encoder.parameters(), eps=eps,
        max_coords_per_param=max_coords_per_param)

    x_s = _random_descriptors(toy.channels, grid, toy.seed, "support")
    x_q = _random_descriptors(toy.channels, grid, toy.seed, "query")

    def reasoning_scalar():
        out = net.reasoning(x_s, x_q)
        return ad.tensor_mean(ad.mul(out, out))

    results["reasoning"] = grad_check(
        reasoning_scalar, net.reasoning.parameters(), eps=eps,
        max_coords_per_param=max_coords_per_param)

    rng = derive_rng(toy.seed, "gradcheck", "grid")
    grid_mask = Tensor((rng.random((grid, grid)) < 0.4).astype(np.float64))
    if not np.any(grid_mask.data):
        grid_mask.data[0, 0] = 1.0

    def excitation_scalar():
        out = net.excitation(x_s, grid_mask, x_q)
        return ad.tensor_mean(ad.mul(out, out))

    results["excitation"] = grad_check(
        excitation_scalar, net.excitation.parameters(), eps=eps,
        max_coords_per_param=max_coords_per_param)

    main = _random_descriptors(toy.channels, grid, toy.seed, "main").data
    aux = _random_descriptors(toy.channels, grid, toy.seed, "aux").data
    target = Tensor((derive_rng(toy.seed, "gradcheck", "target")
                     .random((16, 16)) < 0.3).astype(np.float64))
    results["fusion"] = grad_check(
        lambda: bce_loss(net.head(main, aux), target),
        net.head.parameters(), eps=eps,
        max_coords_per_param=max_coords_per_param)

    results["pipeline"] = grad_check(
        lambda: net.episode_loss(episode)[0],
        net.parameters(), eps=eps,
        max_coords_per_param=max_coords_per_param)
    return results


# ---------------------------------------------------------------------------
# model report


def model_report(path) -> str:
    """Text report of a stored checkpoint: counts per module plus the config."""
    import json
    header, arrays = read_checkpoint(path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise FormatError("format: expected %r, found %r"
                          % (CHECKPOINT_FORMAT, header.get("format")))
    counts: dict[str, int] = {}
    for name, arr in arrays.items():
        counts[name.split(".", 1)[0]] = counts.get(name.split(".", 1)[0], 0) \
            + arr.size
    lines = [
        "format = %s" % header["format"],
        "epoch = %d" % header["epoch"],
        "parameter_count = %d" % sum(a.size for a in arrays.values()),
    ]
    for module in sorted(counts):
        lines.append("%s_parameters = %d" % (module, counts[module]))
    for key, value in sorted(header["config"].items()):
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append("config_%s = %s" % (key, value))
    lines.append("json = %s" % json.dumps(
        {"header": {k: v for k, v in header.items() if k != "parameters"},
         "module_parameters": counts}, sort_keys=True))
    return "\n".join(lines)
