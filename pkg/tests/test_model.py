import json
import math

import pytest
from hypothesis import given, strategies as st

from gatesim.model import (CONFIG_KEYS, ConfigError, Mode, SimConfig, dumps, from_dict, lattice_config,
                           load_config, loads, symmetric_config, to_dict)


def test_empty_document_gives_table_defaults():
    for doc in ("", "   \n", "{}"):
        cfg = loads(doc)
        assert cfg.forcing.F_prop is None
        assert cfg.left.k == cfg.right.k == 400
        assert cfg.numerics.CoR == 0.8
        assert cfg.numerics.dt == 0.004
        assert cfg.left.d == cfg.right.d == 50
        assert cfg.numerics.max_steps == 3000
        assert cfg.forcing.f == 50


def test_unset_f_prop_is_reported_when_needed():
    with pytest.raises(ConfigError, match="F_prop"):
        SimConfig().F_prop


def test_negative_mass_names_the_field():
    with pytest.raises(ConfigError, match="mass"):
        loads('{"M": -1}')


@pytest.mark.parametrize("key", sorted(CONFIG_KEYS))
@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_every_numeric_field_rejects_non_finite(key, bad):
    doc = to_dict(symmetric_config(7.0))
    doc[key] = bad
    with pytest.raises(ConfigError, match=key):
        from_dict(doc)


@pytest.mark.parametrize("token", ["NaN", "Infinity", "-Infinity"])
def test_json_non_finite_literals_rejected(token):
    with pytest.raises(ConfigError):
        loads('{"k_L": %s}' % token)


def test_unknown_and_mistyped_fields_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        loads('{"stiffness": 3}')
    with pytest.raises(ConfigError, match="k_L"):
        loads('{"k_L": "400"}')
    with pytest.raises(ConfigError, match="CoR"):
        loads('{"CoR": true}')
    with pytest.raises(ConfigError, match="JSON"):
        loads("{not json")
    with pytest.raises(ConfigError):
        loads("[1, 2]")


@pytest.mark.parametrize("doc", [
    {"R": 0}, {"L_L": 0}, {"I_R": -1}, {"k_L": -1}, {"d_2": -0.1}, {"F_prop": -1}, {"Rm": -1},
    {"f": 0}, {"D": -1}, {"dt": -0.1}, {"epsilon": 0}, {"CoR": 0}, {"CoR": 1.5}, {"max_steps": 0},
    {"max_steps": 2.5}, {"L_L": 20}, {"f": 500}, {"lattice_cols": 8},
])
def test_invariant_violations(doc):
    with pytest.raises(ConfigError):
        from_dict(doc)


def test_cor_one_and_zero_stiffness_allowed():
    cfg = from_dict({"CoR": 1.0, "k_L": 0, "F_prop": 0})
    assert cfg.numerics.CoR == 1.0 and cfg.left.k == 0


finite = st.floats(min_value=0.01, max_value=1e4, allow_nan=False, allow_infinity=False)


@given(M=finite, R=finite, k=finite, F=st.floats(0, 100), Rm=st.floats(0, 100), D=st.floats(0, 1),
       cor=st.floats(0.01, 1.0), steps=st.integers(1, 10**6))
def test_round_trip_is_a_fixed_point(M, R, k, F, Rm, D, cor, steps):
    cfg = from_dict({"M": M, "R": R, "k_L": k, "F_prop": F, "Rm": Rm, "D": D, "CoR": cor, "max_steps": steps})
    text = dumps(cfg)
    again = loads(text)
    assert again == cfg
    assert dumps(again) == text
    assert isinstance(again.numerics.max_steps, int)


def test_load_config_from_file_and_text(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"F_prop": 7, "k_L": 300}))
    assert load_config(p).left.k == 300
    assert load_config(str(p)).F_prop == 7
    assert load_config('{"k_R": 500}').right.k == 500
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")


def test_with_values_and_fingerprint():
    a = symmetric_config(7.0)
    b = a.with_values(k_L=100)
    assert b.left.k == 100 and a.left.k == 400
    assert a.fingerprint() == symmetric_config(7.0).fingerprint()
    assert a.fingerprint() != b.fingerprint()
    with pytest.raises(ConfigError):
        a.with_values(nope=1)


def test_initial_height_gives_acceleration_distance():
    cfg = SimConfig()
    assert cfg.initial_y == 0.0
    assert cfg.geometry.joint_y - cfg.body.R - cfg.initial_y == cfg.numerics.d_acc


def test_lattice_preset():
    cfg = lattice_config()
    assert cfg.forcing.D == 0.06 and cfg.left.d == 50 and cfg.left.k == cfg.right.k == 400


def test_modes():
    assert Mode.TANGENTIAL.constrained and Mode.POINT.constrained
    assert not Mode.COLLIDING.constrained and Mode.COLLIDING.in_contact
    assert not Mode.FREE.in_contact
