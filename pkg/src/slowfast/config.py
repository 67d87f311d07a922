"""Experiment configuration files.

A configuration is plain JSON validated against :data:`SCHEMA` and then
checked semantically (summability exponents, bounds on ``gamma``, monotone
decrease of ``b2`` in the fast variable). The canonical serialization (sorted
keys, compact separators, output directory excluded) is hashed to give the run
id.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import coefficients as coef
from .integrators import SlowFastConfig
from .signals import APSignal
from .spectral import DriftTerm, SpectralModel, TimeDependentOperator, eigenpairs

__all__ = ["ConfigError", "SCHEMA", "Setup", "load", "validate", "build", "config_hash",
           "canonical_bytes", "linear_validation", "default_config"]


class ConfigError(ValueError):
    """Configuration failed schema or hypothesis validation."""


_signal = {
    "oneOf": [
        {"type": "number"},
        {"type": "object",
         "properties": {
             "offset": {"type": "number"},
             "terms": {"type": "array",
                       "items": {"type": "array", "items": {"type": "number"},
                                 "minItems": 3, "maxItems": 3}},
             "period": {"type": ["number", "null"]},
         },
         "additionalProperties": False},
    ]
}

_noise = {
    "type": "object",
    "properties": {
        "scale": {"type": "number", "minimum": 0},
        "exponent": {"type": "number"},
        "values": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
    "additionalProperties": False,
}

_operator = {
    "type": "object",
    "properties": {
        "noise": _noise,
        "rho": {"oneOf": [{"type": "number"}, {"const": "inf"}]},
        "beta": {"type": "number"},
        "diffusivity": {"type": "number", "exclusiveMinimum": 0},
        "gamma": _signal,
        "gamma_bounds": {"oneOf": [{"type": "null"},
                                   {"type": "array", "items": {"type": "number"},
                                    "minItems": 2, "maxItems": 2}]},
        "drift": {"type": "array", "items": {
            "type": "object",
            "properties": {"signal": _signal,
                           "profile": {"enum": ["constant", "sin", "cos"]},
                           "wavenumber": {"type": "integer", "minimum": 0}},
            "required": ["signal"], "additionalProperties": False}},
    },
    "additionalProperties": False,
}

_diffusion = {
    "type": "object",
    "properties": {"constant": {"type": "number"}, "linear": {"type": "number"},
                   "sine": {"type": "number"}, "signal": _signal},
    "additionalProperties": False,
}

_field = {
    "type": "object",
    "properties": {"modes": {"type": "array", "items": {"type": "number"}}},
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "slow-fast averaging experiment",
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "spatial": {
            "type": "object",
            "properties": {
                "length": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "boundary": {"enum": ["dirichlet", "neumann"]},
                "modes": {"type": "integer", "minimum": 1},
                "nodes": {"type": ["integer", "null"], "minimum": 3},
            },
            "required": ["modes"],
            "additionalProperties": False,
        },
        "slow": _operator,
        "fast": _operator,
        "coefficients": {
            "type": "object",
            "properties": {
                "b1": {"type": "object",
                       "properties": {"slow_poly": {"type": "array", "items": {"type": "number"}},
                                      "fast": {"type": "number"}},
                       "additionalProperties": False},
                "b2": {"type": "object",
                       "properties": {"damping": {"type": "number"},
                                      "poly": {"type": "array", "items": {"type": "number"}},
                                      "poly_signal": _signal,
                                      "coupling": _signal},
                       "additionalProperties": False},
                "g1": _diffusion,
                "g2": _diffusion,
            },
            "additionalProperties": False,
        },
        "dynamics": {
            "type": "object",
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "dt_macro": {"type": "number", "exclusiveMinimum": 0},
                "c_dt": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.1},
                "dt_frozen": {"type": "number", "exclusiveMinimum": 0},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "x0": _field,
                "y0": _field,
            },
            "additionalProperties": False,
        },
        "experiment": {
            "type": "object",
            "properties": {
                "eps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                   "maximum": 1}, "minItems": 1},
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "eta": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "eta_factor": {"type": "number", "exclusiveMinimum": 0},
                "trials": {"type": "integer", "minimum": 1},
                "coupling": {"enum": ["common", "independent"]},
                "drift_oracle": {"enum": ["closed_form", "hmm"]},
                "hmm_paths": {"type": "integer", "minimum": 1},
                "hmm_horizon": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "hmm_cache": {"type": "boolean"},
                "truncation": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "chunk_size": {"type": "integer", "minimum": 1},
                "probe": _field,
            },
            "additionalProperties": False,
        },
        "measure": {
            "type": "object",
            "properties": {
                "time": {"type": "number"},
                "burn_in": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "ensemble": {"type": "integer", "minimum": 2},
                "lags": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "start": {"type": "array", "items": {"type": "number"}},
            },
            "additionalProperties": False,
        },
        "bbar": {
            "type": "object",
            "properties": {
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "paths": {"type": "integer", "minimum": 1},
                "start": {"type": "number"},
                "burn_in": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "grid_points": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "output": {"type": "string"},
    },
    "required": ["spatial"],
    "additionalProperties": False,
}

DEFAULTS = {
    "seed": 20160512,
    "spatial": {"length": None, "boundary": "dirichlet", "modes": 8, "nodes": None},
    "slow": {"noise": {"scale": 1.0, "exponent": 1.0}, "rho": 3.0, "beta": 0.6,
             "diffusivity": 1.0},
    "fast": {"noise": {"scale": 1.0, "exponent": 1.0}, "rho": 3.0, "beta": 0.6,
             "diffusivity": 1.0, "gamma": 1.0, "gamma_bounds": None, "drift": []},
    "coefficients": {"b1": {"slow_poly": [], "fast": 1.0},
                     "b2": {"damping": 1.0, "poly": [], "coupling": 1.0},
                     "g1": {"constant": 0.0}, "g2": {"constant": 0.5}},
    "dynamics": {"alpha": 1.0, "dt_macro": 1e-3, "c_dt": 0.05, "dt_frozen": 0.01,
                 "horizon": 1.0, "x0": {"modes": [1.0]}, "y0": {"modes": []}},
    "experiment": {"eps": [0.5, 0.2, 0.1, 0.05], "kappa": 1.0, "eta": None, "eta_factor": 0.2,
                   "trials": 50, "coupling": "common", "drift_oracle": "closed_form",
                   "hmm_paths": 64, "hmm_horizon": None, "hmm_cache": False,
                   "truncation": None, "chunk_size": 16, "probe": {"modes": [1.0]}},
    "measure": {"time": 0.0, "burn_in": None, "ensemble": 2048,
                "lags": [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0],
                "start": [1.5]},
    "bbar": {"horizon": 100.0, "paths": 64, "start": 0.0, "burn_in": None, "grid_points": 32},
    "output": "runs",
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("b1", "b2", "g1", "g2", "noise"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def linear_validation(**overrides) -> dict:
    """Linear configuration with a closed-form averaged drift.

    ``b1 = s2``, ``b2 = -s2 + c(t) s1`` with ``c(t) = 1 + 0.5 sin t``,
    constant ``gamma = 1``, ``alpha = 1``, additive fast noise ``g2 = 0.5``,
    no slow noise. The averaged drift is ``Bbar(x)_k = x_k / (alpha_k + 2)``.
    """
    cfg = default_config()
    cfg["coefficients"]["b2"]["coupling"] = APSignal.sine(0.5, 1.0, offset=1.0,
                                                          period=2 * math.pi).to_dict()
    return _merge(cfg, overrides)


def canonical_bytes(cfg: dict) -> bytes:
    payload = {k: v for k, v in cfg.items() if k != "output"}
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_bytes(cfg)).hexdigest()


@dataclass
class Setup:
    """Objects built from a validated configuration."""

    config: dict
    slow: SpectralModel
    fast: TimeDependentOperator
    coeffs: coef.CoefficientSet
    base: SlowFastConfig

    @property
    def basis(self):
        return self.slow.basis

    def sim(self, eps: float | None = None, **kw) -> SlowFastConfig:
        from dataclasses import replace
        if eps is not None:
            kw["eps"] = eps
        return replace(self.base, **kw)

    def field(self, spec) -> np.ndarray:
        return _field_coeffs(spec, self.basis.n_modes)


def _field_coeffs(spec, K):
    vals = np.zeros(K)
    modes = (spec or {}).get("modes", [])
    if len(modes) > K:
        raise ConfigError(f"field has {len(modes)} modes but the model keeps {K}")
    vals[:len(modes)] = modes
    return vals


def _noise_values(spec, K):
    if "values" in spec:
        vals = np.asarray(spec["values"], dtype=float)
        if vals.shape != (K,):
            raise ConfigError("noise 'values' needs one entry per mode")
        return vals
    k = np.arange(1, K + 1, dtype=float)
    return float(spec.get("scale", 1.0)) * k ** (-float(spec.get("exponent", 1.0)))


def validate(cfg: dict) -> dict:
    """Schema validation plus default filling; raises :class:`ConfigError`."""
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    full = _merge(DEFAULTS, cfg)
    eps = full["experiment"]["eps"]
    if any(not (0 < e <= 1) for e in eps):
        raise ConfigError("every eps must lie in (0, 1]")
    return full


def build(cfg: dict, check_dissipativity: bool = True) -> Setup:
    """Validate and instantiate models, operator, coefficients and base config."""
    full = validate(cfg)
    sp = full["spatial"]
    K = sp["modes"]
    length = sp.get("length") or math.pi
    try:
        basis = eigenpairs(sp.get("boundary", "dirichlet"), K, length, sp.get("nodes"))
        slow = SpectralModel(basis, _noise_values(full["slow"]["noise"], K), float(full["slow"]["rho"]),
                             full["slow"]["beta"], full["slow"].get("diffusivity", 1.0))
        f = full["fast"]
        fmodel = SpectralModel(basis, _noise_values(f["noise"], K), float(f["rho"]), f["beta"],
                               f.get("diffusivity", 1.0))
        op = TimeDependentOperator(fmodel, APSignal.from_dict(f.get("gamma", 1.0)),
                                   [DriftTerm.from_dict(d) for d in f.get("drift", [])],
                                   f.get("gamma_bounds"))
        coeffs = coef.from_config(full["coefficients"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if check_dissipativity:
        worst = coef.check_dissipativity(coeffs)
        if worst > 1e-9:
            raise ConfigError(f"b2 is not monotone decreasing in the fast variable "
                              f"(max increment product {worst:.3g} > 0)")
    d = full["dynamics"]
    try:
        base = SlowFastConfig(slow, op, coeffs, alpha=d["alpha"], eps=full["experiment"]["eps"][0],
                              dt_macro=d["dt_macro"], c_dt=d["c_dt"], dt_frozen=d["dt_frozen"],
                              horizon=d["horizon"], x0=_field_coeffs(d.get("x0"), K),
                              y0=_field_coeffs(d.get("y0"), K), seed=full["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return Setup(full, slow, op, coeffs, base)


def load(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError:
        raise
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
