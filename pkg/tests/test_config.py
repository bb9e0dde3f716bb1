from __future__ import annotations

import json

import pytest

from panodar.config import PipelineConfig, config_from_dict, read_config
from panodar.errors import ConfigError


def test_empty_document_gives_defaults():
    cfg = config_from_dict({})
    assert cfg == PipelineConfig()
    assert (cfg.window_width, cfg.window_height, cfg.stride) == (512, 400, 256)
    assert (cfg.alpha, cfg.theta_default, cfg.theta_medium) == (0.3, 0.5, 0.7)
    assert cfg.medium_area == (100, 1000) and cfg.lam == 0.2 and len(cfg.classes) == 19


def test_round_trip(tmp_path):
    cfg = config_from_dict({"alpha": 0.4, "window": {"stride": 128}, "classes": ["a", "b"]})
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert read_config(tmp_path / "c.json") == cfg


@pytest.mark.parametrize("doc,key", [
    ({"alpha": 1.5}, "alpha"),
    ({"alpha": "high"}, "alpha"),
    ({"window": {"stride": 600}}, "window.stride"),
    ({"window": {"width": 0}}, "window.width"),
    ({"window": 5}, "window"),
    ({"theta_default": 0.9}, "theta_default"),
    ({"medium_area": [1000, 100]}, "medium_area"),
    ({"medium_area": 5}, "medium_area"),
    ({"lambda": -0.1}, "lambda"),
    ({"classes": ["a", "a"]}, "classes"),
    ({"classes": "road"}, "classes"),
    ({"ce_reduction": "max"}, "ce_reduction"),
])
def test_rejections_name_the_key(doc, key):
    with pytest.raises(ConfigError) as info:
        config_from_dict(doc)
    assert info.value.key == key
    assert key in str(info.value)


def test_unknown_keys_warn(caplog):
    with pytest.warns(UserWarning, match="beta"):
        cfg = config_from_dict({"beta": 1, "window": {"depth": 2}})
    assert cfg.unknown_keys == ("beta", "window.depth")
    assert "beta" in caplog.text


def test_derived_configs():
    cfg = config_from_dict({"alpha": 0.0, "theta_default": 0.0, "theta_medium": 0.0})
    assert cfg.refine.alpha == 0.0
    assert cfg.fusion.theta_medium == 0.0
