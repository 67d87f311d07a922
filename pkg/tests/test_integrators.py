import math
from dataclasses import replace

import numpy as np
import pytest

from slowfast.config import build, linear_validation
from slowfast.integrators import (BlowUpError, TrajectoryRecord, increment_regularity_probe,
                                  integrate_averaged, integrate_coupled, integrate_fast_frozen)

QUIET = {"b1": {"slow_poly": [], "fast": 0.0}, "b2": {"damping": 0.0, "coupling": 0.0},
         "g1": {"constant": 0.0}, "g2": {"constant": 0.0}}


def _setup(**kw):
    return build(linear_validation(**kw))


def test_heat_flow_coupled():
    s = _setup(coefficients=QUIET, spatial={"modes": 16},
               dynamics={"dt_macro": 1e-4, "horizon": 0.5, "x0": {"modes": [1.0, -0.5, 0.25]}})
    cfg = s.sim(eps=0.5)
    rec = integrate_coupled(cfg, [0], record_every=1000)
    exact = np.exp(-np.outer(rec.times, s.slow.alphas)) * cfg.x0
    err = np.max(np.abs(rec.slow[:, 0] - exact)) / np.max(np.abs(cfg.x0))
    assert err < 1e-6


def test_frozen_linear_decay():
    s = _setup(coefficients={**QUIET, "b2": {"damping": 1.0, "coupling": 0.0}})
    cfg = s.sim(eps=1.0)
    y = np.linspace(1, -1, cfg.basis.n_modes)
    rec = integrate_fast_frozen(np.zeros_like(y), 0.0, 2.0, y, cfg, h=1e-3, noise=False)
    rate = s.fast.model.alphas + cfg.alpha + 1.0
    exact = np.exp(-np.outer(rec.times, rate)) * y
    rel = np.abs(rec.fast[:, 0] - exact) / np.maximum(np.abs(exact), 1e-300)
    assert np.max(rel[:, np.abs(y) > 0]) < 1e-4


def test_frozen_ou_stationary_moments():
    # constant coupling c0 = 1, additive g0 = 0.5
    s = _setup(coefficients={**linear_validation()["coefficients"], "b2": {"damping": 1.0, "coupling": 1.0}})
    cfg = s.sim(eps=1.0)
    x = np.zeros(cfg.basis.n_modes)
    x[0] = 1.0
    rec = integrate_fast_frozen(x, 0.0, 6.0, np.zeros_like(x), cfg, streams=np.arange(4000),
                                record_every=600)
    v = rec.fast[-1]
    rate = s.fast.model.alphas + cfg.alpha + 1.0
    mean_ex = x / rate
    var_ex = 0.25 * s.fast.model.noise ** 2 / (2 * rate)
    n = len(v)
    assert np.all(np.abs(v.mean(0) - mean_ex) < 3 * np.sqrt(var_ex / n) + 1e-12)
    assert np.all(np.abs(v.var(0, ddof=1) - var_ex) < 3 * var_ex * math.sqrt(2 / (n - 1)))


def test_coupled_moment_bound_uniform_in_eps():
    s = _setup(dynamics={"horizon": 0.5})
    sups = []
    for eps in (1.0, 0.1, 0.01):
        rec = integrate_coupled(s.sim(eps=eps), np.arange(32), record_every=50)
        sups.append(np.max(np.mean(rec.slow_norm ** 2, axis=1)))
    x2 = float(s.basis.sup_norm(s.base.x0)) ** 2
    assert max(sups) <= 2 * (1 + x2)
    assert max(sups) / min(sups) < 2


def test_averaged_null_drift_is_heat_flow():
    s = _setup(coefficients=QUIET)
    cfg = s.sim()
    rec = integrate_averaged(cfg, lambda u: np.zeros_like(u), record_every=100)
    exact = np.exp(-np.outer(rec.times, s.slow.alphas)) * cfg.x0
    assert np.max(np.abs(rec.slow[:, 0] - exact)) < 1e-12


def test_averaged_linear_closed_form():
    s = _setup(dynamics={"dt_macro": 1e-4})
    cfg = s.sim()
    m = 1.0 / (s.fast.model.alphas + cfg.alpha + 1.0)
    rec = integrate_averaged(cfg, lambda u: u * m, record_every=1000)
    exact = np.exp(np.outer(rec.times, m - s.slow.alphas)) * cfg.x0
    assert np.max(np.abs(rec.slow[:, 0] - exact)) < 1e-3


def test_averaged_step_halving_order_one():
    s = _setup(dynamics={"x0": {"modes": [1.0, 0.5]}})

    def drift(u):
        un = s.basis.to_nodal(u)
        return s.basis.to_spectral(-un ** 3 + un)

    finals = {}
    for dt in (4e-3, 2e-3, 1e-3, 1.25e-4):
        finals[dt] = integrate_averaged(s.sim(), drift, dt=dt).slow[-1, 0]
    ref = finals[1.25e-4]
    e = [np.max(np.abs(finals[dt] - ref)) for dt in (4e-3, 2e-3, 1e-3)]
    for a, b in zip(e, e[1:]):
        assert 1.6 < a / b < 2.6


def test_blowup_guard():
    s = build(linear_validation(coefficients={**QUIET, "b1": {"slow_poly": [0, 0, 0, 5.0], "fast": 0.0}},
                                dynamics={"x0": {"modes": [3.0]}}))
    with pytest.raises(BlowUpError) as info:
        integrate_coupled(s.sim(), [4])
    assert info.value.stream is not None or "4" in str(info.value)


def test_neumann_mean_decays_at_alpha():
    # spatial mean: no diffusion on mode 0, only the fixed alpha damping
    s = _setup(spatial={"boundary": "neumann", "modes": 8}, coefficients=QUIET)
    cfg = s.sim(eps=1.0)
    y = np.zeros(8)
    y[0], y[3] = 2.0, 1.0
    rec = integrate_fast_frozen(np.zeros(8), 0.0, 1.0, y, cfg, noise=False)
    expect = 2.0 * np.exp(-cfg.alpha * rec.times)
    assert np.max(np.abs(rec.fast[:, 0, 0] - expect)) < 1e-12


def test_record_times_increasing():
    with pytest.raises(ValueError):
        TrajectoryRecord(np.array([0.0, 0.2, 0.1]))


def test_bitwise_determinism(setup):
    cfg = setup.sim(horizon=0.05)
    a, b = integrate_coupled(cfg, [0, 5]), integrate_coupled(cfg, [0, 5])
    assert a.slow.tobytes() == b.slow.tobytes() and a.fast.tobytes() == b.fast.tobytes()


def test_regularity_heat_flow_lipschitz():
    s = _setup(coefficients=QUIET, dynamics={"horizon": 0.2, "dt_macro": 1e-4})
    rec = integrate_coupled(s.sim(), [0], record_every=10)
    fit = increment_regularity_probe(rec, p=2, basis=s.basis)
    assert fit.exponent == pytest.approx(1.0, abs=0.1)


def test_regularity_stochastic_half():
    s = _setup(coefficients={**QUIET, "g1": {"constant": 1.0}},
               dynamics={"horizon": 0.5, "x0": {"modes": []}})
    rec = integrate_averaged(s.sim(), lambda u: np.zeros_like(u), streams=np.arange(64))
    fit = increment_regularity_probe(rec, p=2, max_lag_fraction=0.02)
    assert fit.exponent == pytest.approx(0.5, abs=0.1)
    assert fit.ci_low > 0


def test_regularity_needs_samples():
    rec = TrajectoryRecord(np.arange(4.0), slow=np.zeros((4, 1, 2)))
    with pytest.raises(ValueError):
        increment_regularity_probe(rec)


def test_dt_fast_rule(setup):
    cfg = setup.sim(eps=0.05)
    assert cfg.dt_fast <= min(cfg.dt_macro, cfg.c_dt * 0.05) + 1e-15
    with pytest.raises(ValueError):
        replace(cfg, c_dt=0.2)
