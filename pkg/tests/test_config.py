import json

import pytest

from semaug.config import (
    ConfigParse,
    PipelineConfig,
    caption_weighting_ablation,
    load_config,
    noise_guidance_sweep,
    prompt_mode_ablation,
    save_config,
)
from semaug.errors import ValidationError


def test_defaults_validate():
    cfg = PipelineConfig()
    cfg.validate()
    assert (cfg.w_l, cfg.w_c, cfg.noise_rate, cfg.denoising_steps) == (1.5, 0.9, 0.5, 100)
    assert cfg.trainer.milestones == (15, 23) and cfg.trainer.decay_factor == 0.1


def test_round_trip_and_hash(tmp_path):
    cfg = PipelineConfig(global_seed=5, prompt_mode="label_only", filters=("label", "prompt"))
    save_config(cfg, tmp_path / "c.json")
    again = load_config(tmp_path / "c.json")
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_runtime_fields_do_not_change_hash():
    base = PipelineConfig()
    assert base.with_overrides(workers=4, out_dir="x", use_cache=False).config_hash() == base.config_hash()
    assert base.with_overrides(noise_rate=0.3).config_hash() != base.config_hash()


def test_unknown_field_is_parse_error(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"noise_rat": 0.3}))
    with pytest.raises(ConfigParse):
        load_config(tmp_path / "c.json")
    (tmp_path / "d.json").write_text("{not json")
    with pytest.raises(ConfigParse):
        load_config(tmp_path / "d.json")


@pytest.mark.parametrize("override", [
    {"noise_rate": 1.5}, {"prompt_mode": "partial"}, {"k_augment": 0}, {"filters": ("bogus",)},
    {"backends": {"caption": "fake", "score": "nope", "generate": "fake"}}, {"w_l": 0.0},
])
def test_invalid_values(override):
    with pytest.raises(ValidationError):
        PipelineConfig().with_overrides(**override).validate()


def test_prompt_mode_ablation_has_four_distinct_configs():
    configs = prompt_mode_ablation(PipelineConfig())
    assert sorted(c.prompt_mode for c in configs.values()) == ["caption_only", "full", "label_only", "none"]
    assert len({c.config_hash() for c in configs.values()}) == 4


def test_other_ablation_builders():
    cw = caption_weighting_ablation(PipelineConfig())
    assert len(cw) == 6 and len({c.config_hash() for c in cw.values()}) == 6
    assert cw["beam w/o PW"].w_l == 1.0 and cw["caption filter + PW"].selection_strategy == "clip_filter"
    sweep = noise_guidance_sweep(PipelineConfig(), guidance_values=(1.0, 7.5))
    assert len(sweep) == 6
    assert {c.guidance.mapping for c in sweep.values()} == {"constant"}
