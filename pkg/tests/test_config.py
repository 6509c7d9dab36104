import pytest

from impostor.config import RunConfig, parse_config_text
from impostor.core import ConfigError


def test_defaults():
    cfg = parse_config_text("")
    assert cfg.cell_size_m == 1000.0
    assert cfg.n_semantic == 4
    assert cfg.n_mobility == 24
    assert cfg.n_user == 288
    assert cfg.cluster_threshold == 0.75
    assert cfg.parking_numerator_km == 9.0
    assert cfg.window_hours == 15.0
    assert cfg.k_max == 10
    assert cfg.epsilon == 1e-6


def test_parse_and_override():
    text = """
    # a comment
    width_cells = 20
    origin_lat = 31.5

    cluster_threshold = 0.6
    """
    cfg = parse_config_text(text, overrides={"height_cells": "15"})
    assert cfg.width_cells == 20
    assert cfg.height_cells == 15
    assert cfg.origin_lat == 31.5
    assert cfg.cluster_threshold == 0.6


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("no_such_knob = 3")


def test_bad_value_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("width_cells = twelve")


def test_missing_equals_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("just some text")


def test_alpha_beta_must_sum_to_one():
    with pytest.raises(ConfigError):
        parse_config_text("alpha = 0.7\nbeta = 0.7")


def test_bad_format_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("dataset_format = bus")


def test_grid_and_scheme_accessors():
    cfg = RunConfig(width_cells=4, height_cells=3, n_user=144)
    assert cfg.grid.n_regions == 12
    assert cfg.scheme.n_user == 144
