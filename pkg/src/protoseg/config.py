"""Run configuration: a flat dataclass plus a line-based file format.

Files hold one `key = value` pair per line; blank lines and lines starting
with # are skipped. Unknown keys are rejected rather than ignored so typos
cannot silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class Config:
    image_size: int = 64
    channels: int = 32          # feature channels c out of the encoder
    proto_dim: int = 16         # prototype count r in the reasoning branch
    gcn_depth: int = 2
    reduction: int = 4          # channel-attention bottleneck ratio
    encoder_width: int = 16
    encoder_depth: int = 4
    k_shot: int = 1
    fold: int = 0               # held-out test fold
    epochs: int = 10
    episodes_per_epoch: int = 20
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    graph_reasoning: bool = True
    excitation: bool = True
    edge_fusion: bool = True    # edge-similarity route (needs excitation)
    pool_divide_by_l: bool = False

    def validate(self) -> "Config":
        if self.image_size < 16 or self.image_size % 4:
            raise ConfigError("image_size must be >= 16 and divisible by 4")
        for name in ("channels", "proto_dim", "gcn_depth", "reduction",
                     "encoder_width", "encoder_depth", "k_shot", "epochs",
                     "episodes_per_epoch"):
            if getattr(self, name) < 1:
                raise ConfigError("%s must be positive" % name)
        if self.channels % self.reduction:
            raise ConfigError("channels must divide by reduction")
        if self.proto_dim < 2:
            raise ConfigError("proto_dim must be >= 2")
        if self.encoder_depth < 4:
            raise ConfigError("encoder_depth must be >= 4")
        if not 0 <= self.fold <= 2:
            raise ConfigError("fold must be 0, 1 or 2")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.edge_fusion and not self.excitation:
            raise ConfigError("edge_fusion requires excitation")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "Config":
        return replace(self, **kw).validate()


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError("key %r: %r is not a boolean" % (key, raw))


def parse_config(text: str) -> Config:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError("line %d: expected 'key = value', got %r"
                              % (lineno, line))
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError("line %d: unknown key %r" % (lineno, key))
        if key in values:
            raise ConfigError("line %d: duplicate key %r" % (lineno, key))
        ftype = _FIELD_TYPES[key]
        try:
            if ftype in (bool, "bool"):
                values[key] = _parse_bool(key, raw)
            elif ftype in (int, "int"):
                values[key] = int(raw)
            else:
                values[key] = float(raw)
        except ValueError as e:
            raise ConfigError("line %d: key %r: %s" % (lineno, key, e)) from e
    return Config(**values).validate()


def load_config(path) -> Config:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def config_from_dict(d: dict) -> Config:
    unknown = set(d) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError("unknown config keys: %s" % sorted(unknown))
    return Config(**d).validate()


def render_config(config: Config) -> str:
    lines = []
    for f in fields(Config):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append("%s = %s" % (f.name, value))
    return "\n".join(lines) + "\n"
