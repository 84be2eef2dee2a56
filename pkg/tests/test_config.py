import pytest

from fusecore.config import ConfigError, from_dict, load_config, load_preset


def test_toy_defaults():
    cfg = load_preset("toy")
    enc = cfg.model.encoder
    assert (cfg.data.world.steps, enc.height, enc.width) == (16, 32, 32)
    assert (cfg.model.clips.count, cfg.model.clips.frames_per_clip, enc.patch) == (4, 2, 4)
    assert cfg.training.stage2.lora.r == 8 and cfg.training.stage2.lora.alpha == 16


def test_paper_preset_scaling():
    cfg = load_preset("paper")
    lora = cfg.training.stage2.lora
    assert (lora.r, lora.alpha) == (64, 128)
    assert lora.alpha / lora.r == 2
    assert cfg.model.fusion.n_queries == 32
    assert cfg.training.stage1.epochs == 4 and cfg.training.stage2.epochs == 3
    f = cfg.model.fusion
    assert (f.d_model, f.n_layers) == (768, 8)
    s1, s2 = cfg.training.stage1, cfg.training.stage2
    assert (s1.lr, s2.lr) == (1e-4, 2e-5)
    for stage in (s1, s2):
        assert stage.betas == (0.9, 0.98) and stage.weight_decay == 0.05 and stage.warmup == 2000


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"model": {"fusion": {"n_query": 4}}},
    {"training": {"stage2": {"lora": {"rank": 4}}}},
    {"data": {"world": {"gravity": 1}}},
])
def test_unknown_keys_rejected(data):
    with pytest.raises(ConfigError, match="unknown key"):
        from_dict(data)


def test_bad_preset_and_bad_value():
    with pytest.raises(ConfigError):
        from_dict({"preset": "huge"})
    with pytest.raises(ConfigError):
        from_dict({"data": {"world": {"min_entities": 3, "max_entities": 2}}})


def test_override_file_merges(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("model:\n  fusion:\n    n_queries: 4\n")
    cfg = load_config(path)
    assert cfg.model.fusion.n_queries == 4
    assert cfg.model.fusion.d_model == load_preset("toy").model.fusion.d_model


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("FUSECORE_SEED", "17")
    assert load_config().seed == 17
    assert from_dict({}, apply_env=False).seed == 0


def test_snapshot_round_trip():
    cfg = load_preset("toy")
    assert from_dict(cfg.to_dict(), apply_env=False) == cfg


def test_stage_length_from_epochs():
    stage = load_preset("paper").training.stage1
    assert stage.total_steps(2048 * 3 + 1) == 4 * 4
