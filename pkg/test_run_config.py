from pathlib import Path

import pytest

from flow_library import Cellular, RescaledMixing, Shear, Zero
from run_config import ConfigError, apply_overrides, describe_flow, load_config, parse_config

MINIMAL = """
scenario: simulate
grid: {dim: 2, points: 16}
"""


def test_minimal_config_defaults():
    config = parse_config(MINIMAL)
    assert config.scenario == "simulate"
    assert config.solver.grid.points_per_axis == 16
    assert config.solver.nu == 1.0 and config.solver.p == 1.5
    assert isinstance(config.flow, Zero)
    assert config.initial_data.kind == "single_mode"
    assert config.sample_every == 10
    assert config.seed == 0


def test_exponent_above_fujita_bound_is_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "solver: {p: 2.5}\n")
    assert "1 + 2/N = 2" in str(info.value)


def test_shear_scenarios_need_a_flow():
    with pytest.raises(ConfigError, match="flow: required"):
        parse_config("scenario: shear-suppression\ngrid: {dim: 2, points: 32}\n")
    with pytest.raises(ConfigError, match="needs a shear flow"):
        parse_config("scenario: shear-suppression\ngrid: {dim: 2, points: 32}\nflow: {type: cellular}\n")


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "solver: {viscosity: 0.1}\n")
    assert "solver.viscosity" in str(info.value)


def test_all_violations_are_reported_together():
    text = """
scenario: simulate
grid: {dim: 2, points: 12}
solver: {dt: -1, nu: 0}
colour: blue
"""
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    errors = info.value.errors
    assert len(errors) >= 4
    joined = "\n".join(errors)
    for fragment in ("grid", "solver.dt", "solver.nu", "colour"):
        assert fragment in joined


def test_numeric_strings_are_coerced():
    config = parse_config(MINIMAL + "solver: {dt: 1e-3, t_end: 5e-1}\n")
    assert config.solver.dt == 1e-3
    assert config.solver.t_end == 0.5


def test_flow_sections():
    shear = parse_config("scenario: simulate\ngrid: {dim: 2, points: 32}\n"
                         "flow: {type: shear, profile: {kind: sine, power: 3, amplitude: 2}}\n").flow
    assert isinstance(shear, Shear)
    assert shear.critical_order == 3

    cellular = parse_config(MINIMAL + "flow: {type: cellular, amplitude: 4, cell_scale: 0.5}\n").flow
    assert cellular == Cellular(4.0, 0.5)

    mixing = parse_config(MINIMAL + "flow: {type: rescaled_mixing, amplitude: 3, base: {type: cellular}}\n").flow
    assert isinstance(mixing, RescaledMixing) and mixing.base == Cellular(1.0)
    assert describe_flow(mixing)["base"]["type"] == "cellular"

    with pytest.raises(ConfigError, match="no shearing"):
        parse_config(MINIMAL + "flow: {type: shear, profile: [1, 1, 1, 1, 1, 1, 1, 1]}\n")


def test_enhanced_sweep_needs_four_viscosities():
    text = ("scenario: enhanced-dissipation-sweep\ngrid: {dim: 2, points: 32}\n"
            "flow: {type: shear}\ndissipation: {nu_list: [0.1, 0.01, 0.001]}\n")
    with pytest.raises(ConfigError, match="at least 4"):
        parse_config(text)


def test_blowup_scan_needs_superlinear_exponent():
    with pytest.raises(ConfigError, match="p > 1"):
        parse_config("scenario: blowup-scan\ngrid: {dim: 2, points: 16}\nsolver: {p: 1.0}\n")


def test_initial_data_preset_errors():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config(MINIMAL + "initial_data: {preset: single_mode, width: 3}\n")


def test_overrides_and_hash(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(MINIMAL + "seed: 3\n", encoding="utf-8")
    config = load_config(path)
    assert config.seed == 3
    assert config.config_hash == load_config(path).config_hash

    overridden = apply_overrides(config, output_dir=tmp_path / "out", seed=9)
    assert overridden.seed == 9
    assert overridden.output_dir == Path(tmp_path / "out")
    assert overridden.config_hash != config.config_hash
    assert apply_overrides(config) is config


def test_invalid_yaml():
    with pytest.raises(ConfigError, match="not valid YAML"):
        parse_config("scenario: [simulate\n")


def test_shear_bound_factor():
    base = "scenario: shear-suppression\ngrid: {dim: 2, points: 32}\nflow: {type: shear}\n"
    assert parse_config(base).shear.bound_factor == 2.0
    assert parse_config(base + "shear: {bound_factor: 1.5}\n").shear.bound_factor == 1.5
    with pytest.raises(ConfigError, match="shear.bound_factor"):
        parse_config(base + "shear: {bound_factor: 0}\n")
