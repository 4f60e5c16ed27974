import pytest

from terraincl.config import (
    RunConfig,
    apply_overrides,
    desk_config,
    load_config,
    save_config,
)


def test_paper_scale_defaults():
    cfg = RunConfig()
    assert cfg.num_train_agents == 4096
    assert cfg.agents_per_terrain_val == 512
    assert cfg.phase_length == 500
    assert 8 * cfg.phase_length == 4000
    assert cfg.ppo.steps_per_iteration == 24
    assert cfg.ppo.num_minibatches == 4
    assert cfg.ppo.epochs == 5
    assert cfg.env.episode_cap_s == 20.0
    cfg.validate()


def test_desk_defaults():
    cfg = desk_config()
    assert cfg.num_train_agents == 256
    assert cfg.agents_per_terrain_val == 64
    assert cfg.phase_length == 50
    cfg.validate()


def test_save_load_round_trip(tmp_path):
    cfg = desk_config()
    cfg.seed = 77
    cfg = apply_overrides(
        cfg, {"learning_rate": "0.001", "slope_grade": "0.3", "backend": "surrogate"}
    )
    path = tmp_path / "config.txt"
    save_config(cfg, path)
    loaded = load_config(path)
    assert loaded == cfg


def test_surrogate_targets_published_in_saved_config(tmp_path):
    cfg = apply_overrides(desk_config(), {"backend": "surrogate"})
    path = tmp_path / "config.txt"
    save_config(cfg, path)
    text = path.read_text()
    assert "# surrogate_target_flat = " in text
    assert "# surrogate_target_slope_up+rough = " in text


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "config.txt"
    path.write_text("gravity = 9.81\n")
    with pytest.raises(ValueError, match="unknown config key 'gravity'"):
        load_config(path)


def test_comments_and_blank_lines(tmp_path):
    path = tmp_path / "config.txt"
    path.write_text(
        "# a comment\n\nseed = 5  # trailing comment\nvalidation_enabled = false\n"
    )
    cfg = load_config(path)
    assert cfg.seed == 5
    assert cfg.validation_enabled is False


def test_malformed_line_rejected(tmp_path):
    path = tmp_path / "config.txt"
    path.write_text("just words\n")
    with pytest.raises(ValueError, match="expected 'key = value'"):
        load_config(path)


def test_bad_value_names_key():
    with pytest.raises(ValueError, match="'phase_length'"):
        apply_overrides(RunConfig(), {"phase_length": "many"})


def test_validate_rejects_bad_counts():
    cfg = apply_overrides(RunConfig(), {"num_train_agents": "0"})
    with pytest.raises(ValueError, match="num_train_agents"):
        cfg.validate()
    cfg = apply_overrides(RunConfig(), {"gamma": "1.5"})
    with pytest.raises(ValueError, match="gamma"):
        cfg.validate()
