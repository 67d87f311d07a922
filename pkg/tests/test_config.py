import json
import math

import pytest

from slowfast.config import (ConfigError, build, default_config, linear_validation, load,
                             validate)


def test_defaults_build():
    s = build(default_config())
    assert s.basis.n_modes == 8 and s.base.eps == 0.5
    assert s.slow.beta * (s.slow.rho - 2) / s.slow.rho == pytest.approx(0.2)


def test_linear_validation_is_periodic():
    s = build(linear_validation())
    c = s.coeffs.b2_coupling
    assert c.period == pytest.approx(2 * math.pi) and c.offset == 1.0


def test_infinite_rho():
    s = build(linear_validation(fast={"rho": "inf", "beta": 0.5}))
    assert math.isinf(s.fast.model.rho)


@pytest.mark.parametrize("patch", [
    {"spatial": {"modes": 0}},
    {"spatial": {"modes": 8, "boundary": "robin"}},
    {"experiment": {"eps": [0.5, 1.5]}},
    {"experiment": {"eps": [0.0]}},
    {"slow": {"rho": 3.0, "beta": 3.5}},
    {"fast": {"rho": "inf", "beta": 1.0}},
    {"fast": {"gamma": {"offset": 1.0, "terms": [[0.5, 1.0, 0.0]]}, "gamma_bounds": [0.9, 1.1]}},
    {"coefficients": {"b2": {"damping": -1.0}}},
    {"coefficients": {"b2": {"damping": 0.0, "poly": [0, 0, 0, 1.0]}}},
    {"bogus": 1},
])
def test_rejected(patch):
    with pytest.raises(ConfigError):
        build(linear_validation(**patch))


def test_validate_fills_defaults():
    full = validate({"spatial": {"modes": 4}})
    assert full["experiment"]["trials"] == 50 and full["spatial"]["boundary"] == "dirichlet"


def test_load(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(linear_validation()))
    assert load(p) == linear_validation()
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load(p)
    with pytest.raises(OSError):
        load(tmp_path / "missing.json")
