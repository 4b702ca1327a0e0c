import logging
import math

import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from quadsim.model import (
    DHRow,
    ConfigError,
    LinkParams,
    dump_robot_config,
    load_robot_config,
    load_robot_file,
    validate_model,
)


def test_default_robot_is_valid(model):
    assert validate_model(model) == []
    assert model.n_dof == 20
    assert model.n_actuated == 14
    assert sorted(model.joint_indices()) == list(range(14))


def test_total_mass_is_sum_of_links(model):
    assert model.total_mass == pytest.approx(sum(p.mass for _, p in model.links()))
    assert model.total_mass == pytest.approx(30.0)
    assert len(model.links()) == 15


def test_default_leg_dh_pattern(model):
    for leg in model.legs:
        alphas = [row.alpha for row in leg.dh]
        assert alphas == [0.0, -math.pi / 2, 0.0, 0.0]
        assert [row.theta_offset for row in leg.dh] == [0.0] * 4
        assert [row.a for row in leg.dh[:2]] == [0.0, 0.0]
        assert all(row.a > 0 for row in leg.dh[2:])
        assert all(row.d == 0.0 for row in leg.dh)
        assert leg.dh[3].is_fixed


def test_config_round_trip_exact(model):
    text = dump_robot_config(model)
    assert load_robot_config(text) == model
    assert dump_robot_config(load_robot_config(text)) == text


@settings(max_examples=30, deadline=None)
@given(mass=st.floats(0.01, 50.0), length=st.floats(0.01, 1.0), mu=st.floats(0.0, 2.0),
       L=st.floats(0.05, 0.5))
def test_round_trip_property(model, mass, length, mu, L):
    leg = model.legs[2]
    dh = leg.dh[:2] + (replace(leg.dh[2], a=L),) + leg.dh[3:]
    legs = model.legs[:2] + (replace(leg, dh=dh, upper=replace(leg.upper, mass=mass, length=length)),) + model.legs[3:]
    m = replace(model, legs=legs, mu=mu)
    assert load_robot_config(dump_robot_config(m)) == m


def test_load_file(tmp_path, model):
    p = tmp_path / "robot.ini"
    p.write_text(dump_robot_config(model))
    assert load_robot_file(p) == model


def test_zero_mass_names_link(model):
    text = dump_robot_config(model).replace("[link FL_lower]\nmass = 0.5", "[link FL_lower]\nmass = 0.0")
    with pytest.raises(ConfigError) as err:
        load_robot_config(text)
    assert "FL_lower" in str(err.value)
    assert "LinkParams.mass" in str(err.value)


def test_missing_mu_defaults_with_notice(model, caplog):
    text = dump_robot_config(model).replace(f"mu = {model.mu!r}\n", "")
    with caplog.at_level(logging.INFO, logger="quadsim.model"):
        m = load_robot_config(text)
    assert m.mu == 0.6
    assert any("mu" in r.getMessage() for r in caplog.records)


def test_unknown_key_rejected_with_line(model):
    text = dump_robot_config(model).replace("[spine]\n", "[spine]\nstiffness = 3\n")
    with pytest.raises(ConfigError) as err:
        load_robot_config(text)
    line = text.splitlines().index("stiffness = 3") + 1
    assert err.value.line == line
    assert "stiffness" in str(err.value)


def test_unknown_section_rejected(model):
    with pytest.raises(ConfigError, match="unknown section"):
        load_robot_config(dump_robot_config(model) + "\n[tail]\nlength = 1\n")


def test_malformed_line_reports_line_number(model):
    lines = dump_robot_config(model).splitlines()
    lines.insert(3, "this line has no separator")
    with pytest.raises(ConfigError) as err:
        load_robot_config("\n".join(lines))
    assert err.value.line == 4


def test_bad_number_reports_field(model):
    text = dump_robot_config(model).replace("main_length = 0.3", "main_length = long")
    with pytest.raises(ConfigError) as err:
        load_robot_config(text)
    assert err.value.field == "geometry.main_length"
    assert err.value.line is not None


def test_negative_length_diagnostic(model):
    geo = replace(model.geometry, main=replace(model.geometry.main, length=-0.3))
    diags = validate_model(replace(model, geometry=geo))
    assert len(diags) == 1
    assert "LinkParams.length" in diags[0]


def test_duplicate_joint_index_diagnostic(model):
    leg = model.legs[1]
    dh = (replace(leg.dh[0], joint_index=2),) + leg.dh[1:]
    m = replace(model, legs=(model.legs[0], replace(leg, dh=dh)) + model.legs[2:])
    diags = validate_model(m)
    assert any("uniqueness rule" in d for d in diags)


def test_dh_pattern_violation(model):
    leg = model.legs[0]
    dh = (leg.dh[0], replace(leg.dh[1], alpha=0.0)) + leg.dh[2:]
    m = replace(model, legs=(replace(leg, dh=dh),) + model.legs[1:])
    assert any("DHRow.alpha" in d for d in validate_model(m))


def test_terminal_row_must_be_fixed(model):
    leg = model.legs[0]
    dh = leg.dh[:3] + (DHRow(leg.dh[3].a, 0.0, 0.0, 0.0, 4),)
    m = replace(model, legs=(replace(leg, dh=dh),) + model.legs[1:])
    assert validate_model(m)


def test_gravity_and_mu_invariants(model):
    assert validate_model(replace(model, gravity=0.0))
    assert validate_model(replace(model, mu=-0.1))
    assert validate_model(replace(model, mu=0.0)) == []


def test_link_params_box():
    p = LinkParams(1.0, 0.2, 0.1, 0.05)
    assert p.box == (0.2, 0.1, 0.05)
    assert np.allclose(p.com_offset, 0.0)
