"""Config parsing, validation, rendering round trip."""

import pytest

from protoseg.config import (Config, config_from_dict, load_config,
                             parse_config, render_config)
from protoseg.errors import ConfigError


def test_defaults_validate():
    cfg = Config().validate()
    assert cfg.image_size == 64
    assert cfg.channels == 32
    assert cfg.proto_dim == 16
    assert cfg.graph_reasoning and cfg.excitation and cfg.edge_fusion


def test_parse_basic_and_comments():
    cfg = parse_config("""
    # training shape
    image_size = 32
    epochs = 3

    seed = 41
    graph_reasoning = false
    edge_fusion = off
    """)
    assert cfg.image_size == 32
    assert cfg.epochs == 3
    assert cfg.seed == 41
    assert cfg.graph_reasoning is False
    assert cfg.edge_fusion is False


@pytest.mark.parametrize("raw,expected", [
    ("true", True), ("1", True), ("yes", True), ("on", True),
    ("false", False), ("0", False), ("no", False), ("off", False),
    ("TRUE", True), ("Off", False),
])
def test_bool_forms(raw, expected):
    cfg = parse_config("pool_divide_by_l = %s" % raw)
    assert cfg.pool_divide_by_l is expected


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigError) as err:
        parse_config("image_size = 64\nbogus_key = 3\n")
    assert "line 2" in str(err.value)

    with pytest.raises(ConfigError) as err:
        parse_config("epochs = 1\nepochs = 2\n")
    assert "duplicate" in str(err.value)

    with pytest.raises(ConfigError) as err:
        parse_config("epochs = soon\n")
    assert "line 1" in str(err.value)

    with pytest.raises(ConfigError):
        parse_config("just some text\n")


def test_validation_rules():
    with pytest.raises(ConfigError):
        Config(image_size=30).validate()       # not divisible by 4
    with pytest.raises(ConfigError):
        Config(channels=30, reduction=4).validate()
    with pytest.raises(ConfigError):
        Config(momentum=1.0).validate()
    with pytest.raises(ConfigError):
        Config(fold=3).validate()
    with pytest.raises(ConfigError):
        Config(encoder_depth=2).validate()
    with pytest.raises(ConfigError):
        Config(excitation=False, edge_fusion=True).validate()
    # edge fusion off with excitation off is fine
    Config(excitation=False, edge_fusion=False).validate()


def test_with_overrides_revalidates():
    cfg = Config()
    assert cfg.with_overrides(epochs=5).epochs == 5
    with pytest.raises(ConfigError):
        cfg.with_overrides(momentum=2.0)


def test_config_from_dict_rejects_unknown():
    with pytest.raises(ConfigError):
        config_from_dict({"episodes": 3})
    cfg = config_from_dict({"epochs": 2, "seed": 9})
    assert cfg.epochs == 2 and cfg.seed == 9


def test_render_parse_round_trip():
    cfg = Config(image_size=32, epochs=7, learning_rate=0.005,
                 graph_reasoning=False, edge_fusion=False)
    again = parse_config(render_config(cfg))
    assert again == cfg


def test_load_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("image_size = 32\nseed = 3\n")
    cfg = load_config(path)
    assert cfg.image_size == 32 and cfg.seed == 3
