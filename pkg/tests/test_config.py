import json

import pytest

from perthom.config import RunConfig, load_config_file
from perthom.errors import ConfigError


def test_defaults_round_trip():
    cfg = RunConfig.from_mapping({})
    assert cfg.model == 1
    assert cfg.normalization == "volume-normalized"
    assert cfg.etas == (0.1,)
    assert RunConfig.from_mapping(cfg.to_dict()) == cfg


def test_custom_round_trip():
    data = {
        "model": 2,
        "normalization": "as-printed",
        "out": "results",
        "workers": 3,
        "profile": {"name": "laminate_2d", "a0": 1.0, "a1": 9.0},
        "family": {"amplitude": 0.3, "mean_offset": 1.0,
                   "remainder": "quadratic", "remainder_amplitude": 0.2},
        "deformation": {"amplitude": 0.05, "theta_amplitude": 0.1},
        "grid": {"etas": [0.2, 0.1], "Ns": [0, 2], "subdivisions": [2, 4]},
        "seeds": {"base": 5, "count": 7},
        "solver": {"rtol": 1e-12, "max_iter": 900},
        "single": {"eta": 0.05, "seed": 3, "N": 2, "subdivisions": 8,
                   "direction": [0.0, 1.0]},
        "suites": {"residual_band": True, "band_factor": 3.0,
                   "reference": [0.2, 0, 2]},
    }
    cfg = RunConfig.from_mapping(data)
    assert cfg.model == 2
    assert cfg.profile_params == {"a0": 1.0, "a1": 9.0}
    assert cfg.Ns == (0, 2)
    assert cfg.n_seeds == 7
    assert cfg.direction == (0.0, 1.0)
    assert cfg.suites["reference"] == (0.2, 0, 2)
    assert RunConfig.from_mapping(cfg.to_dict()) == cfg


def test_unknown_keys_named():
    with pytest.raises(ConfigError, match="unknown config key bogus"):
        RunConfig.from_mapping({"bogus": 1})
    with pytest.raises(ConfigError, match="unknown config key grid.bogus"):
        RunConfig.from_mapping({"grid": {"bogus": 1}})
    with pytest.raises(ConfigError, match="unknown config key suites.foo"):
        RunConfig.from_mapping({"suites": {"foo": True}})


def test_field_errors_name_the_field():
    with pytest.raises(ConfigError, match="model"):
        RunConfig.from_mapping({"model": 3})
    with pytest.raises(ConfigError, match="normalization"):
        RunConfig.from_mapping({"normalization": "weird"})
    with pytest.raises(ConfigError, match="workers"):
        RunConfig.from_mapping({"workers": -1})
    with pytest.raises(ConfigError, match="grid.etas"):
        RunConfig.from_mapping({"grid": {"etas": []}})
    with pytest.raises(ConfigError, match="grid.Ns"):
        RunConfig.from_mapping({"grid": {"Ns": ["x"]}})
    with pytest.raises(ConfigError, match="family.remainder"):
        RunConfig.from_mapping({"family": {"remainder": "cubic"}})
    with pytest.raises(ConfigError, match="family.amplitude"):
        RunConfig.from_mapping({"family": {"amplitude": -0.5}})
    with pytest.raises(ConfigError, match="solver.rtol"):
        RunConfig.from_mapping({"solver": {"rtol": 0.0}})
    with pytest.raises(ConfigError, match="seeds.count"):
        RunConfig.from_mapping({"seeds": {"count": 0}})
    with pytest.raises(ConfigError, match="suites.reference"):
        RunConfig.from_mapping({"suites": {"reference": [0.1, 1]}})
    with pytest.raises(ConfigError, match="suites.residual_band"):
        RunConfig.from_mapping({"suites": {"residual_band": "yes"}})


def test_load_toml(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(
        'model = 1\nout = "outdir"\n\n'
        "[grid]\netas = [0.2]\nNs = [0, 1]\nsubdivisions = [2]\n\n"
        "[seeds]\ncount = 4\n"
    )
    cfg = load_config_file(p)
    assert cfg.out == "outdir"
    assert cfg.etas == (0.2,)
    assert cfg.n_seeds == 4


def test_load_json_and_echoed_summary(tmp_path):
    cfg = RunConfig.from_mapping({"grid": {"etas": [0.25]}})
    plain = tmp_path / "run.json"
    plain.write_text(json.dumps(cfg.to_dict()))
    assert load_config_file(plain) == cfg
    # a summary file embeds the config under "config"; accepted directly
    echoed = tmp_path / "summary.json"
    echoed.write_text(json.dumps({"created": "x", "config": cfg.to_dict()}))
    assert load_config_file(echoed) == cfg


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config_file(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("model = [unclosed")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config_file(bad)
    badjson = tmp_path / "bad.json"
    badjson.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config_file(badjson)
    other = tmp_path / "run.yaml"
    other.write_text("x: 1")
    with pytest.raises(ConfigError, match=".toml or .json"):
        load_config_file(other)


def test_builders_wrap_family_errors():
    cfg = RunConfig.from_mapping({"profile": {"name": "nope"}})
    with pytest.raises(ConfigError, match="profile"):
        cfg.build_profile()
    cfg = RunConfig.from_mapping({"profile": {"name": "constant", "bad": 1}})
    with pytest.raises(ConfigError, match="profile"):
        cfg.build_profile()
    # amplitude so large the ellipticity window closes
    cfg = RunConfig.from_mapping({"family": {"amplitude": 50.0}})
    with pytest.raises(ConfigError, match="family"):
        cfg.build_coefficients()


def test_build_sweep_spec():
    cfg = RunConfig.from_mapping({
        "grid": {"etas": [0.2], "Ns": [0], "subdivisions": [2]},
        "solver": {"max_iter": 0},
    })
    spec = cfg.build_sweep_spec()
    assert spec.max_iter is None  # 0 means automatic
    assert spec.coefficients is not None
    cfg2 = RunConfig.from_mapping({
        "model": 2,
        "deformation": {"amplitude": 0.1},
        "grid": {"etas": [0.2], "Ns": [0], "subdivisions": [2]},
        "solver": {"max_iter": 77},
    })
    spec2 = cfg2.build_sweep_spec()
    assert spec2.max_iter == 77
    assert spec2.diffeo is not None and spec2.profile is not None
    # eta beyond the family validity window is a config error
    cfg3 = RunConfig.from_mapping({
        "family": {"eta_max": 0.1},
        "grid": {"etas": [0.2], "Ns": [0], "subdivisions": [2]},
    })
    with pytest.raises(ConfigError, match="grid.etas"):
        cfg3.build_sweep_spec()


def test_resolved_direction():
    cfg = RunConfig.from_mapping({})
    assert cfg.resolved_direction(2) == (1.0, 0.0)
    cfg = RunConfig.from_mapping({"single": {"direction": [0.0, 1.0]}})
    assert cfg.resolved_direction(2) == (0.0, 1.0)
    with pytest.raises(ConfigError, match="single.direction"):
        cfg.resolved_direction(1)
