import pytest

from priorfuse.config import FusionConfig, dump_config, load_config, parse_pairs, toy_config
from priorfuse.errors import ConfigurationError


def test_defaults():
    cfg = FusionConfig()
    assert cfg.scales == 3 and cfg.widths == (8, 16, 32)
    assert (cfg.w_int, cfg.w_grad, cfg.w_ssim, cfg.w_struct) == (4.0, 24.0, 0.5, 4.5)
    assert cfg.steps == 50 and cfg.seed == 42


@pytest.mark.parametrize("changes", [
    dict(widths=(8, 8, 32)), dict(widths=(8, 16)), dict(top_k=9), dict(temperature=0.0), dict(blend=1.5),
    dict(kernel_size=4), dict(ddcb_mode="none"), dict(d0_mode="x"), dict(dtype="float16"), dict(heads=3),
    dict(w_grad=-1.0),
])
def test_invalid_configs(changes):
    with pytest.raises(ConfigurationError):
        FusionConfig(**changes)


def test_file_then_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# toy\nscales = 2\nwidths = 4,8  # two scales\nseed=7\n\n")
    cfg = load_config(path, ["seed=9", "blend=0.25"])
    assert cfg.scales == 2 and cfg.widths == (4, 8) and cfg.seed == 9 and cfg.blend == 0.25


def test_dump_round_trip(tmp_path):
    cfg = toy_config(apg_mode="history_only", lr=1e-3)
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_dict_round_trip():
    cfg = FusionConfig(seed=3)
    assert FusionConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError, match="bogus"):
        FusionConfig.from_dict({"bogus": 1})


def test_parse_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_pairs(["scales"])
    with pytest.raises(ConfigurationError):
        parse_pairs(["scales = two"])
    with pytest.raises(ConfigurationError):
        parse_pairs(["colour = red"])
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.cfg")
