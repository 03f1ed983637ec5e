import pathlib

import pytest

from ocl.config import list_presets, load_config, resolve_config_path
from ocl.config.validate import hyperparams_for, validate
from ocl.core.errors import ConfigError
from ocl.util.dicts import deep_merge, parse_override, set_dotted

ROOT = pathlib.Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "tests" / "fixtures" / "blobs_small.yaml"


def test_every_preset_validates():
    names = list_presets()
    assert {"convex_appd", "split_mnist5", "rotation10", "grid_fig2"} <= set(names)
    for name in names:
        cfg = validate(load_config(name))
        assert cfg.name == name
        for strategy in cfg.strategies:
            assert cfg.hyperparams[strategy].alpha > 0
            # tau starts at the learning rate in every shipped preset
            assert cfg.hyperparams[strategy].initial_tau == cfg.hyperparams[strategy].alpha


def test_preset_layers_over_base_config():
    cfg = validate(load_config("convex_appd"))
    assert cfg.stream.kind == "linear" and cfg.model.hidden == ()
    # from the packaged config.yaml
    assert cfg.stream.noise_var == 0.01
    assert cfg.hyperparams["ocar"].lambda_mode == "time_growth"
    assert cfg.hyperparams["er"].alpha == 0.03
    assert cfg.hyperparams["ngd"].alpha == 0.3


def test_overrides_win():
    cfg = validate(load_config(FIXTURE, ["experiment.seeds=[3, 4]", "hyperparams.ocar.alpha=0.2"]))
    assert cfg.seeds == (3, 4)
    assert cfg.hyperparams["ocar"].alpha == 0.2
    assert cfg.hyperparams["er"].alpha == 0.05


def test_unknown_preset():
    with pytest.raises(ConfigError):
        resolve_config_path("no_such_preset")
    assert resolve_config_path("convex_appd").name == "convex_appd.yaml"


def _field_of(overrides):
    with pytest.raises(ConfigError) as exc:
        validate(load_config(FIXTURE, overrides))
    return exc.value.field


def test_config_errors_name_the_field():
    assert _field_of(["experiment.strategies=[sgd]"]) == "experiment.strategies"
    assert _field_of(["hyperparams.ocar.alpha=-1"]) == "hyperparams.ocar.alpha"
    assert _field_of(["hyperparams.er.momentum=0.9"]) == "hyperparams.er"
    assert _field_of(["stream.kind=video"]) == "stream.kind"
    assert _field_of(["stream.colour=red"]) == "stream"
    assert _field_of(["model.head=gaussian_mse"]) == "model.head"
    assert _field_of(["experiment.buffer_capacity=0"]) == "experiment.buffer_capacity"
    assert _field_of(["stream.eval_fraction=1.5"]) == "stream.eval_fraction"
    assert _field_of(["model.hidden=[]", "experiment.probe=true"]) == "experiment.probe"


def test_class_ratio_needs_class_ids():
    with pytest.raises(ConfigError) as exc:
        validate(load_config("rotation10", ["hyperparams.ocar.lambda_mode=class_ratio"]))
    assert exc.value.field == "hyperparams.ocar.lambda_mode"


def test_bad_override_is_config_error():
    with pytest.raises(ConfigError):
        load_config(FIXTURE, ["experiment.seeds"])
    with pytest.raises(ConfigError):
        load_config(FIXTURE, ["experiment.seeds=[1, 2"])


def test_hyperparams_merge_default_section():
    hp = hyperparams_for({"hyperparams": {"default": {"alpha": 0.1, "inner_steps": 3}, "ocar": {"alpha": 0.2}}}, "ocar")
    assert hp.alpha == 0.2 and hp.inner_steps == 3
    with pytest.raises(ConfigError):
        hyperparams_for({"hyperparams": {}}, "er")


def test_dict_helpers():
    base = {"a": {"b": 1, "c": 2}, "d": 3}
    assert deep_merge(base, {"a": {"b": 5}}) == {"a": {"b": 5, "c": 2}, "d": 3}
    assert set_dotted(base, "a.e.f", 1)["a"]["e"] == {"f": 1}
    assert base["a"] == {"b": 1, "c": 2}
    assert parse_override("x.y=[1, 2]") == ("x.y", [1, 2])
    assert parse_override("x=true") == ("x", True)
    assert parse_override("out=runs/a=b") == ("out", "runs/a=b")
