import pytest

from salaudit.config import RunConfig, config_from_dict, load_config
from salaudit.errors import ConfigError


def test_defaults():
    cfg = config_from_dict({})
    assert cfg.L == [20, 40, 60, 80, 100]
    assert cfg.perturbations == ["mean", "random-rgb"]
    assert cfg.faithfulness_pixels == 100
    assert cfg.random_orderings == 100
    assert cfg.bootstrap_resamples == 10_000
    assert cfg.coverages == [0.95, 0.999]
    assert cfg.krippendorff_level == "ordinal"
    cfg.validate()


def test_l_beyond_pixels_rejected_before_compute():
    cfg = config_from_dict({"dataset": {"kind": "synthetic", "height": 32, "width": 32}, "L": [2000]})
    with pytest.raises(ConfigError, match="2000"):
        cfg.validate()


def test_sample_beyond_pixels_rejected():
    cfg = config_from_dict({"dataset": {"height": 8, "width": 8}, "L": [8], "faithfulness_pixels": 65})
    with pytest.raises(ConfigError):
        cfg.validate()


@pytest.mark.parametrize("patch", [
    {"perturbations": ["blur"]},
    {"orders": ["sideways"]},
    {"methods": ["shap"]},
    {"methods": ["edge", "edge"]},
    {"krippendorff_level": "nominal"},
    {"coverages": [1.0]},
    {"threads": 0},
    {"min_confidence": 2.0},
    {"seed": -1},
    {"model": {"kind": "network"}},
    {"dataset": {"kind": "raw"}},
    {"methods": ["ground-truth"], "model": {"link": "sigmoid"}},
])
def test_invalid_configs(patch):
    with pytest.raises(ConfigError):
        config_from_dict(patch).validate()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="dataset"):
        config_from_dict({"dataset": {"colour": "red"}})


def test_yaml_loading(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 9\nL: [40, 20, 20]\ndataset:\n  n_images: 5\n  n-classes: 3\n")
    cfg = load_config(p)
    assert cfg.seed == 9 and cfg.L == [20, 40] and cfg.dataset.n_images == 5 and cfg.dataset.n_classes == 3
    p.write_text("seed: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_to_dict_round_trip():
    cfg = config_from_dict({"seed": 4, "methods": ["edge", "random"]})
    again = config_from_dict(cfg.to_dict())
    assert again == cfg
    assert isinstance(again, RunConfig)
