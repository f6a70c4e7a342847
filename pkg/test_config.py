import logging
import math
from pathlib import Path

import pytest
from numpy.testing import assert_allclose

from config import LevisimConfig, load_config, parse_config_text, parse_quantity
from dynamics import ColdDamping, ParametricPLL, prepare
from errors import ConfigError
from trace_format import RECORD_WIDTH

CONFIG_DIR = Path(__file__).parent / "configs"

PROLATE_TEXT = """
[particle]
shape = prolate
r1 = 75 nm
r3 = 150 nm

[tweezer]
psi = 0.75 rad

[environment]
pressure = 5 mbar
"""


def test_parse_quantity_units():
    assert_allclose(parse_quantity("80 nm", "length"), 80e-9)
    assert_allclose(parse_quantity("1.06um", "length"), 1.06e-6)
    assert_allclose(parse_quantity("0.5 mbar", "pressure"), 50.0)
    assert_allclose(parse_quantity("1 Torr", "pressure"), 133.322368, rtol=1e-8)
    assert_allclose(parse_quantity("45 deg", "angle"), 0.25 * math.pi)
    assert_allclose(parse_quantity("300 mW", "power"), 0.3)
    assert_allclose(parse_quantity("28 u", "mass"), 28 * 1.6605390e-27, rtol=1e-6)
    assert parse_quantity("0", "angle") == 0.0
    assert parse_quantity(2.5, "time") == 2.5


def test_parse_quantity_rejects_missing_or_wrong_units():
    with pytest.raises(ValueError, match="needs a unit"):
        parse_quantity("80", "length")
    with pytest.raises(ValueError, match="not a length unit"):
        parse_quantity("80 mbar", "length")
    with pytest.raises(ValueError):
        parse_quantity("eighty nm", "length")


def test_sections_are_converted_to_si():
    config = parse_config_text(PROLATE_TEXT)
    assert config.particle.shape == "prolate"
    assert_allclose(config.particle.r1, 75e-9)
    assert_allclose(config.environment.pressure, 500.0)
    assert_allclose(config.tweezer.psi, 0.75)
    shape = config.shape()
    assert shape.semi_axes == pytest.approx((75e-9, 75e-9, 150e-9))


def test_missing_keys_are_logged_with_defaults(caplog):
    with caplog.at_level(logging.WARNING, logger="config"):
        config = parse_config_text(PROLATE_TEXT)
    assert "[tweezer] power not set, using default 0.3" in caplog.text
    assert config.tweezer.power == 0.3


def test_complete_config_logs_no_defaults(caplog):
    with caplog.at_level(logging.WARNING, logger="config"):
        load_config(CONFIG_DIR / "reference_sphere.ini")
    assert "not set" not in caplog.text


def test_unknown_key_or_section_is_rejected():
    with pytest.raises(ConfigError, match="tweezer"):
        parse_config_text("[tweezer]\nlaser_colour = red\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text("[detector]\ngain = 1\n")


def test_bad_values_name_their_key():
    with pytest.raises(ConfigError, match="pressure"):
        parse_config_text("[environment]\npressure = 5 furlongs\n")


def test_overrides_replace_file_values():
    config = parse_config_text(PROLATE_TEXT, overrides=["tweezer.psi=0 rad", "simulation.seed=9"])
    assert config.tweezer.psi == 0.0
    assert config.simulation.seed == 9
    with pytest.raises(ConfigError):
        parse_config_text(PROLATE_TEXT, overrides=["psi=0"])
    with pytest.raises(ConfigError):
        parse_config_text(PROLATE_TEXT, overrides=["laser.psi=0"])


def test_hash_is_stable_and_sensitive():
    a = parse_config_text(PROLATE_TEXT)
    b = parse_config_text(PROLATE_TEXT)
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 16
    assert a.with_psi(0.1).config_hash() != a.config_hash()
    assert a.with_seed(3).config_hash() != a.config_hash()


def test_feedback_section_builds_controllers():
    cold = parse_config_text("[feedback]\ncontroller = cold_damping\ndof = x\ngain = 2e4 1/s\n"
                             "imprecision = 1e-24 m2/Hz\nsetpoint = 10 nm\n")
    controller = cold.feedback.build()
    assert isinstance(controller, ColdDamping)
    assert controller.gain == 2e4 and controller.dof == "x"
    assert_allclose(controller.setpoint, 10e-9)

    pll = parse_config_text("[feedback]\ncontroller = parametric_pll\ndof = beta\ndepth = 0.1\n"
                            "frequency = 1 Mrad/s\nbandwidth = 2 kHz\nsetpoint = 90 deg\n")
    controller = pll.feedback.build()
    assert isinstance(controller, ParametricPLL)
    assert controller.frequency == 1e6 and controller.bandwidth == 2e3
    assert_allclose(controller.setpoint, 0.5 * math.pi)

    assert LevisimConfig().feedback.build() is None


def test_simulation_section_parsing():
    config = parse_config_text("[simulation]\nduration = 2 ms\ndt = 100 ns\nrecoil_order = 32x64\n"
                               "gas_noise = off\nrotation = on\n")
    sim = config.simulation_config()
    assert_allclose(sim.duration, 2e-3)
    assert_allclose(sim.dt, 1e-7)
    assert sim.recoil_order == (32, 64)
    assert not sim.toggles.gas_noise and sim.toggles.rotation == "on"
    assert sim.config_hash == config.config_hash()


def test_output_rate_and_decimation_parsing():
    sim = parse_config_text("[simulation]\noutput_rate = 2 MHz\n").simulation_config()
    assert_allclose(sim.output_rate, 2e6)
    assert sim.decimation is None
    sim = parse_config_text("[simulation]\noutput_rate = auto\ndecimation = auto\n").simulation_config()
    assert sim.output_rate == "auto" and sim.decimation is None
    sim = parse_config_text("[simulation]\noutput_rate = none\ndecimation = 5\n").simulation_config()
    assert sim.output_rate is None and sim.decimation == 5
    with pytest.raises(ConfigError, match="output_rate"):
        parse_config_text("[simulation]\noutput_rate = 0 Hz\n").simulation_config()


def test_chi_override_reaches_properties():
    config = parse_config_text("[particle]\nchi = 1.5, 1.8, 2.4\n")
    assert config.properties().chi.tolist() == [1.5, 1.8, 2.4]
    assert config.simulation_config().chi_override == (1.5, 1.8, 2.4)


def test_sweep_grid():
    config = parse_config_text("[sweep]\nstart = 0 rad\nstop = 45 deg\npoints = 3\n")
    assert_allclose(config.sweep.grid(), [0.0, math.pi / 8.0, math.pi / 4.0])
    with pytest.raises(ConfigError):
        parse_config_text("[sweep]\npoints = 0\n")


def test_invalid_shell_is_a_config_error():
    config = parse_config_text("[particle]\nshape = shell\nr1 = 42 nm\nr2 = 57 nm\nr3 = 91 nm\nthickness = 50 nm\n")
    with pytest.raises(ConfigError):
        config.simulation_config()
    with pytest.raises(ConfigError):
        parse_config_text("[particle]\nshape = triaxial\nr1 = 42 nm\n").simulation_config()


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.ini")), ids=lambda p: p.stem)
def test_shipped_configs_build(path):
    config = load_config(path)
    sim = config.simulation_config()
    assert sim.duration > 0.0
    assert sim.config_hash == config.config_hash()


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.ini")), ids=lambda p: p.stem)
def test_shipped_configs_keep_traces_bounded(path):
    model = prepare(load_config(path).simulation_config())
    records = model.steps // model.decimation + 1
    assert records * RECORD_WIDTH * 8 < 1e9
    if path.stem == "reference_sphere":
        # 2.5 s at 500 kHz
        assert model.decimation > 1
        assert_allclose(records, 1.25e6, rtol=0.1)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
