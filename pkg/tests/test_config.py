import dataclasses

import pytest
from hypothesis import given, strategies as st

from mela.config import (
    ConfigError,
    ExperimentConfig,
    bounce_preset,
    load_config,
    parse_config,
    seed_override,
    sinusoid_preset,
)


def test_defaults_and_presets():
    s = sinusoid_preset()
    assert s.task_spec().sizes == (1, 40, 40, 1)
    assert s.mela_spec().s_pool == 200 and s.mela_spec().s_code == 20
    b = bounce_preset()
    assert b.task_spec().sizes == (6, 40, 40, 40, 2)
    assert b.x_dim == 6 and b.y_dim == 2


def test_parse_overrides_preset_defaults():
    cfg = parse_config("[experiment]\nfamily = bounce\nseed = 3\n[train]\niterations = 7\n[model]\ntask_hidden = 8,8\n")
    assert cfg == bounce_preset(seed=3, iterations=7, task_hidden=(8, 8))
    assert parse_config("[baselines]\nmaml_steps = none\n").maml_steps is None
    assert parse_config("[baselines]\nbaseline_lr_final = 1e-4\n").baseline_lr_final == 1e-4


def test_errors_name_field_and_line():
    with pytest.raises(ConfigError, match=r"bad.ini:3: train.iterations: must be positive"):
        parse_config("[experiment]\n[train]\niterations = 0\n", "bad.ini")
    with pytest.raises(ConfigError, match=r"bad.ini:2: unknown field train.bogus"):
        parse_config("[train]\nbogus = 1\n", "bad.ini")
    with pytest.raises(ConfigError, match=r"bad.ini:2: train.lr: cannot parse"):
        parse_config("[train]\nlr = fast\n", "bad.ini")
    with pytest.raises(ConfigError, match="family"):
        parse_config("[experiment]\nfamily = cubes\n")
    with pytest.raises(ConfigError, match="slope"):
        parse_config("[model]\nslope = 1.5\n")
    with pytest.raises(ConfigError):
        parse_config("no section header\n")


def test_load_config(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[eval]\nfinetune_steps = 0  # no fine-tuning\n")
    assert load_config(p).finetune_steps == 0


def test_hash_tracks_every_field():
    base = sinusoid_preset()
    assert base.config_hash() == sinusoid_preset().config_hash()
    assert len(base.config_hash()) == 16
    assert base.replace(seed=1).config_hash() != base.config_hash()
    assert base.replace(lr=2e-3).config_hash() != base.config_hash()


def test_canonical_text_round_trips():
    cfg = bounce_preset(seed=9, patience=3)
    assert parse_config(cfg.canonical_text()) == cfg


@given(st.integers(0, 10**6), st.integers(1, 500), st.floats(1e-5, 1.0), st.sampled_from(["sinusoid", "bounce"]))
def test_text_round_trip_property(seed, iters, lr, family):
    cfg = ExperimentConfig(family=family, seed=seed, iterations=iters, lr=lr)
    back = parse_config(cfg.canonical_text())
    assert dataclasses.asdict(back) == dataclasses.asdict(cfg)


def test_seed_priority():
    cfg = sinusoid_preset(seed=1)
    assert seed_override(cfg, None, {}).seed == 1
    assert seed_override(cfg, None, {"MELA_SEED": "5"}).seed == 5
    assert seed_override(cfg, 9, {"MELA_SEED": "5"}).seed == 9
    with pytest.raises(ConfigError):
        seed_override(cfg, None, {"MELA_SEED": "x"})
