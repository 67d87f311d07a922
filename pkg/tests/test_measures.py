import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowfast.config import build, default_config, linear_validation
from slowfast.measures import (EmpiricalMeasure, TestFunctionDictionary, ap_measure_diagnostic,
                               dual_lipschitz_distance, estimate_evolution_measure,
                               evolution_property_residual, holder_seminorm,
                               mixing_decay_estimate, tightness_proxy)
from slowfast.signals import APSignal, uniform_ap_check
from slowfast.spectral import eigenpairs

N = 512


@pytest.fixture(scope="module")
def lin():
    s = build(linear_validation())
    return s, s.sim(eps=1.0)


def e1(K, a=1.0):
    x = np.zeros(K)
    x[0] = a
    return x


def closed_mean(t, a, xk):
    # int_{-inf}^t exp(-a (t - r)) (1 + 0.5 sin r) dr
    return xk * (1 / a + 0.5 * (a * math.sin(t) - math.cos(t)) / (a * a + 1))


class TestEmpiricalMeasure:
    def test_needs_two_finite_members(self, basis):
        with pytest.raises(ValueError):
            EmpiricalMeasure(0.0, np.zeros(8), np.zeros((1, 8)), basis)
        bad = np.zeros((3, 8))
        bad[1, 2] = np.inf
        with pytest.raises(ValueError):
            EmpiricalMeasure(0.0, np.zeros(8), bad, basis)

    def test_save_load_roundtrip(self, tmp_path, basis, rng):
        m = EmpiricalMeasure(0.25, rng.standard_normal(8), rng.standard_normal((5, 8)), basis,
                             {"T_burn": 2.0})
        m.save(tmp_path / "mu")
        back = EmpiricalMeasure.load(tmp_path / "mu")
        assert back.members.tobytes() == m.members.tobytes()
        assert back.time == m.time and back.meta == m.meta
        assert back.basis.same_as(basis)


class TestEvolutionMeasure:
    def test_mean_matches_closed_form(self, lin):
        s, cfg = lin
        x = e1(8, 1.5)
        t = 0.7
        mu = estimate_evolution_measure(x, t, cfg, T_burn=4.0, N=1024)
        a = s.fast.model.alphas[0] + cfg.alpha + 1
        mean, se = mu.integrate(lambda m: m[:, 0])
        assert abs(mean - closed_mean(t, a, 1.5)) < 3 * se

    def test_burn_in_doubling(self, lin):
        s, cfg = lin
        d = TestFunctionDictionary(cfg.basis)
        x = e1(8)
        a = estimate_evolution_measure(x, 0.0, cfg, 2.0, N)
        b = estimate_evolution_measure(x, 0.0, cfg, 4.0, N, stream_offset=N)
        rep = dual_lipschitz_distance(a, b, d)
        assert rep.value < 2 * rep.mc_error

    def test_initial_state_forgotten(self, lin):
        s, cfg = lin
        d = TestFunctionDictionary(cfg.basis)
        x = e1(8)
        a = estimate_evolution_measure(x, 0.0, cfg, 2.0, N)
        b = estimate_evolution_measure(x, 0.0, cfg, 2.0, N, y0=e1(8), stream_offset=N)
        rep = dual_lipschitz_distance(a, b, d)
        assert rep.value < 3 * rep.mc_error

    def test_moment_envelope(self, lin):
        s, cfg = lin
        for p in (2, 4):
            ratios = []
            for a in (0.0, 1.0, 2.0):
                mu = estimate_evolution_measure(e1(8, a), 0.0, cfg, 2.0, 256)
                ratios.append(mu.moment(p) / (1 + a ** p))
            assert ratios[2] <= 1.5 * max(ratios[:2])

    def test_record_times(self, lin):
        s, cfg = lin
        ms = estimate_evolution_measure(e1(8), 1.0, cfg, 1.0, 8, record_times=[0.5, 1.0])
        single = estimate_evolution_measure(e1(8), 1.0, cfg, 1.5, 8)
        assert ms[1].members.tobytes() == single.members.tobytes()


class TestDistance:
    def test_zero_on_identical(self, lin, rng):
        d = TestFunctionDictionary(lin[1].basis)
        m = rng.standard_normal((50, 8))
        assert dual_lipschitz_distance(m, m, d).value == 0.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_pseudometric(self, seed):
        d = TestFunctionDictionary(eigenpairs("dirichlet", 8))
        g = np.random.default_rng(seed)
        a, b, c = (g.standard_normal((g.integers(2, 40), 8)) * g.uniform(0.1, 3) for _ in range(3))
        ab = dual_lipschitz_distance(a, b, d).value
        ba = dual_lipschitz_distance(b, a, d).value
        ac = dual_lipschitz_distance(a, c, d).value
        cb = dual_lipschitz_distance(c, b, d).value
        assert ab == ba and ab >= 0
        assert ab <= ac + cb + 1e-15

    def test_point_masses_linear(self, basis):
        d = TestFunctionDictionary(basis)
        slope = np.max(np.abs(d.probes[:, 0]) * d.scale)
        for h in (1e-2, 1e-3, 1e-4):
            a = np.zeros((2, 8))
            b = np.tile(e1(8, h), (2, 1))
            assert dual_lipschitz_distance(a, b, d).value == pytest.approx(h * slope, rel=h)

    def test_functionals_bounded_lipschitz(self, basis, rng):
        d = TestFunctionDictionary(basis)
        assert np.all(d.scale + d.lipschitz <= 1 + 1e-12)
        y = rng.standard_normal((200, 8))
        z = y + 0.1 * rng.standard_normal((200, 8))
        gap = np.abs(d.evaluate(y) - d.evaluate(z))
        dist = basis.sup_norm(y - z)
        assert np.all(gap <= d.lipschitz[None, :] * dist[:, None] * (1 + 1e-3) + 1e-12)

    def test_empty_dictionary(self, basis):
        with pytest.raises(ValueError):
            TestFunctionDictionary(basis, probes=np.zeros((0, 8)))


class TestEvolutionProperty:
    def test_degenerate_interval(self, lin):
        s, cfg = lin
        r = evolution_property_residual(e1(8), 0.5, 0.5, cfg, N=64, T_burn=1.0)
        assert np.all(r.residual == 0)

    def test_linear_within_band(self, lin):
        s, cfg = lin
        r = evolution_property_residual(e1(8), 0.0, 1.0, cfg, N=N, T_burn=2.0)
        assert r.within

    def test_autonomous_family_is_stationary(self):
        s = build(linear_validation(coefficients={"b2": {"damping": 1.0, "coupling": 1.0}}))
        cfg = s.sim(eps=1.0)
        d = TestFunctionDictionary(cfg.basis)
        a = estimate_evolution_measure(e1(8), 0.0, cfg, 3.0, N)
        b = estimate_evolution_measure(e1(8), 2.0, cfg, 3.0, N, stream_offset=N)
        rep = dual_lipschitz_distance(a, b, d)
        assert rep.value < 3 * rep.mc_error


class TestMixing:
    def test_needs_four_lags(self, lin):
        with pytest.raises(ValueError):
            mixing_decay_estimate(e1(8), e1(8), lin[1], [0, 0.1, 0.2], N=8)

    def test_start_at_measure_is_inconclusive(self, lin):
        s, cfg = lin
        mu = estimate_evolution_measure(e1(8), 0.0, cfg, 5.0 / 3, 64)
        est = mixing_decay_estimate(e1(8), mu.members, cfg, np.linspace(0, 1, 5), N=64,
                                    T_burn=5.0 / 3)
        assert np.all(est.gaps == 0) and not est.conclusive

    def test_independent_start_within_noise(self, lin):
        s, cfg = lin
        mu = estimate_evolution_measure(e1(8), 0.0, cfg, 5.0 / 3, N, stream_offset=10 * N)
        est = mixing_decay_estimate(e1(8), mu.members, cfg, np.linspace(0, 1, 5), N=N,
                                    T_burn=5.0 / 3)
        assert np.all(est.gaps <= 4 * est.se)

    def test_gap_drops_by_e(self, lin):
        s, cfg = lin
        est = mixing_decay_estimate(e1(8), e1(8), cfg, np.linspace(0, 1, 9), N=N, T_burn=5.0 / 3)
        assert est.conclusive and est.lags[-1] >= 1 / est.rate
        assert est.gaps[0] / est.gaps[-1] >= math.e


class TestAPMeasure:
    def test_zero_shift_is_pure_noise(self, lin):
        s, cfg = lin
        rep = ap_measure_diagnostic(e1(8), [0.0], [0.0], cfg, N=N, T_burn=2.0)
        assert rep.accepted[0]

    def test_true_period_accepted(self, lin):
        s, cfg = lin
        rep = ap_measure_diagnostic(e1(8), [0.0, 1.0], [2 * math.pi, 1.5], cfg, N=N, T_burn=2.0)
        assert rep.accepted[0]
        assert not rep.accepted[1]

    def test_quasi_periodic_near_period(self):
        sig = APSignal(1.0, ((0.25, 1.0, 0.0), (0.25, math.sqrt(2), 0.0)))
        s = build(linear_validation(coefficients={"b2": {"damping": 1.0, "coupling": sig.to_dict()}}))
        cfg = s.sim(eps=1.0)
        tol = 0.1
        rep = uniform_ap_check([sig], tol, 80.0)
        tau = float(rep.common_periods[rep.common_periods > 1][0])
        out = ap_measure_diagnostic(e1(8), [0.0, 1.0], [tau], cfg, N=N, T_burn=2.0)
        # the measure moves by at most the forcing discrepancy, damped by the fast decay
        assert out.worst[0] < 2 * tol


class TestTightness:
    def test_deterministic_ensemble_matches_analytic(self):
        b = eigenpairs("dirichlet", 8)
        c = np.zeros(8)
        c[:3] = [1.0, -0.4, 0.2]
        decay = c * np.exp(-b.alphas * 0.3)
        ens = np.tile(decay, (3, 1))
        stats_ = tightness_proxy(ens, 0.25, basis=b, n_points=97)
        pts = np.linspace(0, math.pi, 97)
        vals = sum(decay[k] * math.sqrt(2 / math.pi) * np.sin((k + 1) * pts) for k in range(8))
        exact = holder_seminorm(vals[None], pts, 0.25)[0]
        assert np.all(np.abs(stats_.seminorms - exact) < 1e-6)

    def test_quantiles_stable_in_time(self):
        s = build(default_config())
        cfg = s.sim(eps=1.0)
        times = np.linspace(0, 2 * math.pi, 5, endpoint=False)
        q = []
        for t in times:
            mu = estimate_evolution_measure(e1(8), float(np.round(t, 2)), cfg, 2.0, N)
            q.append(tightness_proxy(mu, 0.25).quantiles[0.5])
        q = np.array(q)
        assert np.all(np.abs(q / q.mean() - 1) < 0.2)

    def test_bernstein_scaling(self, rng):
        theta = 0.25
        c_fit = None
        for K in (4, 8, 16):
            b = eigenpairs("dirichlet", K)
            c = rng.standard_normal((200, K))
            st_ = tightness_proxy(c, theta, basis=b, n_points=8 * K + 1)
            ratio = np.max(st_.seminorms / (K ** theta * st_.sup_norms))
            if c_fit is None:
                c_fit = ratio
            assert ratio <= 1.5 * c_fit

    def test_theta_range(self, basis):
        with pytest.raises(ValueError):
            tightness_proxy(np.zeros((2, 8)), 0.6, basis=basis)
