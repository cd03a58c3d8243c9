import json

import pytest

from spectral_guard.config import (
    PRESETS,
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    load_config,
    preset,
)


def test_canonical_preset_pins_acceptance_parameters():
    cfg = preset("canonical")
    assert (cfg.m, cfg.n, cfg.s, cfg.k, cfg.delta, cfg.eps_noise) == (64, 64, 2, 8, 1e-4, 0.0)
    assert (cfg.eta, cfg.eta_z, cfg.seed_count) == (1e-3, 1e-2, 100)
    assert (cfg.lora_rank, cfg.alpha, cfg.lambda_ortho, cfg.fact_count, cfg.recall_tol) == (4, 32.0, 10.0, 50, 0.1)
    assert cfg.bench_seeds == 20 and cfg.ablate_seeds == 10
    assert cfg.ablate_lambdas == (0.1, 1.0, 10.0, 100.0) and cfg.ablate_ranks == (2, 4, 8)
    assert cfg.dims[0] == 32 and len(cfg.dims) == 3


def test_unknown_preset():
    with pytest.raises(ConfigError, match="preset"):
        preset("nope")
    assert "smoke" in PRESETS


def test_round_trip_through_dict():
    cfg = preset("smoke")
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_k_above_rank_names_field(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "kind": "bench",\n  "k": 99\n}\n')
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "k" and info.value.line == 3
    assert "field 'k'" in str(info.value) and "line 3" in str(info.value)


def test_unknown_field_rejected_with_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "lora_rank": 2,\n  "learning_rate": 0.1\n}\n')
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "learning_rate" and info.value.line == 3


def test_syntax_error_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "k": 4,\n  "lr": \n}\n')
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == 4


@pytest.mark.parametrize("data,field", [
    ({"kind": "train"}, "kind"),
    ({"lr": -1.0}, "lr"),
    ({"lambda_ortho": -0.5}, "lambda_ortho"),
    ({"modes": ["svf_guided", "magic"]}, "modes"),
    ({"k": "eight"}, "k"),
    ({"s": 60}, "s"),
    ({"ablate_ranks": [2, 64]}, "ablate_ranks"),
    ({"rank_alpha_policy": "other"}, "rank_alpha_policy"),
])
def test_validation_names_field(data, field):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(data)
    assert info.value.field == field


def test_overrides_parse_json_values():
    cfg = apply_overrides(preset("smoke"), ["lr=0.5", "kind=theory", "dims=[8, 8]", "k=2", "hub_width=2",
                                            "tail_width=1", "ablate_ranks=[2]", "ablate_ks=[2]"])
    assert cfg.lr == 0.5 and cfg.kind == "theory" and cfg.dims == (8, 8)
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["nonsense"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["missing=1"])


def test_train_config_carries_fields():
    tc = preset("canonical").train_config(lambda_ortho=0.0, seed=3)
    assert tc.lambda_ortho == 0.0 and tc.seed == 3 and tc.k == 8 and tc.lora_rank == 4
