import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowfast.coefficients import from_config, nemytskii_apply
from slowfast.signals import APSignal
from slowfast.spectral import (DriftTerm, FieldState, SpectralModel, TimeDependentOperator,
                               eigenpairs, evolution_apply, evolution_multiplier,
                               psi_convolution, semigroup_apply, simpson_integral)


def test_dirichlet_eigenvalues():
    b = eigenpairs("dirichlet", 3, math.pi)
    np.testing.assert_allclose(b.alphas, [1, 4, 9])


def test_neumann_eigenvalues_and_constant_mode():
    b = eigenpairs("neumann", 2, math.pi)
    np.testing.assert_allclose(b.alphas, [0, 1], atol=1e-14)
    e0 = b.to_nodal(np.array([1.0, 0.0]))
    assert np.ptp(e0) < 1e-12


@pytest.mark.parametrize("bc", ["dirichlet", "neumann"])
@pytest.mark.parametrize("K", [1, 8, 16])
def test_gram_is_identity(bc, K):
    b = eigenpairs(bc, K)
    assert np.max(np.abs(b.gram() - np.eye(K))) < 1e-10


def test_unknown_boundary():
    with pytest.raises(ValueError):
        eigenpairs("robin", 3)


def test_grid_antialiasing_and_order():
    b = eigenpairs("dirichlet", 8)
    nodes = b.grid.nodes
    assert b.grid.n_nodes >= 2 * 8 + 1
    assert np.all(np.diff(nodes) > 0) and nodes[0] >= 0 and nodes[-1] <= math.pi


def test_roundtrip_band_limited(rng):
    b = eigenpairs("dirichlet", 8)
    c = rng.standard_normal(8)
    f = FieldState(b, c)
    back = FieldState.from_nodal(b, f.nodal)
    assert np.max(np.abs(back.nodal - f.nodal)) < 1e-10


def test_h1_rejected():
    b = eigenpairs("dirichlet", 4)
    with pytest.raises(ValueError):
        SpectralModel(b, np.ones(4), rho=3.0, beta=3.0)
    with pytest.raises(ValueError):
        SpectralModel(b, np.ones(4), rho=math.inf, beta=1.0)
    SpectralModel(b, np.ones(4), rho=math.inf, beta=0.9)


def test_default_model_summability():
    b = eigenpairs("dirichlet", 8)
    m = SpectralModel.power_law(b)
    assert m.beta * (m.rho - 2) / m.rho == pytest.approx(0.2)
    assert np.isfinite(m.kappa) and np.isfinite(m.zeta)


class TestSemigroup:
    def setup_method(self):
        self.b = eigenpairs("dirichlet", 8)
        self.m = SpectralModel.power_law(self.b)

    def test_identity_at_zero(self, rng):
        c = rng.standard_normal(8)
        np.testing.assert_array_equal(semigroup_apply(self.m, c, 0.0), c)

    def test_mode_one_decay(self):
        f = semigroup_apply(self.m, FieldState.mode(self.b, 0), 0.5)
        assert f.coeffs[0] == pytest.approx(math.exp(-0.5), abs=1e-15)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            semigroup_apply(self.m, np.ones(8), -0.1)

    def test_against_implicit_euler(self, rng):
        # fine-step implicit Euler of du/dt = A u
        c = rng.standard_normal(8)
        t, dt = 0.2, 1e-5
        u = c.copy()
        for _ in range(int(round(t / dt))):
            u = u / (1 + dt * self.m.alphas)
        ref = semigroup_apply(self.m, c, t)
        assert np.max(np.abs(u - ref)) / np.max(np.abs(ref)) < 1e-4

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 2), st.floats(0, 2), st.floats(0, 3))
    def test_semigroup_law(self, t1, t2, lam):
        c = np.linspace(-1, 1, 8)
        a = semigroup_apply(self.m, semigroup_apply(self.m, c, t1, lam), t2, lam)
        b = semigroup_apply(self.m, c, t1 + t2, lam)
        assert np.max(np.abs(a - b)) < 1e-12


class TestEvolution:
    def setup_method(self):
        self.b = eigenpairs("dirichlet", 8)
        self.m = SpectralModel.power_law(self.b)
        self.g = APSignal.sine(0.5, 1.0, offset=1.0)

    def test_constant_gamma_reduces_to_semigroup(self, rng):
        op = TimeDependentOperator(self.m, 1.0)
        c = rng.standard_normal(8)
        a = evolution_apply(op, c, 0.3, 1.1, shift=0.7)
        b = semigroup_apply(self.m, c, 0.8, 0.7)
        np.testing.assert_allclose(a, b, rtol=1e-13)

    def test_gamma_integral_quadrature(self):
        s, t = 0.3, 2.9
        exact = (t - s) - 0.5 * (math.cos(t) - math.cos(s))
        assert abs(simpson_integral(self.g, s, t, 1e-2) - exact) < 1e-8
        assert abs(self.g.integral(s, t) - exact) < 1e-12

    def test_substitution_identity(self):
        # U_{lam,eps}(t,s) with gamma equals U_{lam,1}(t/eps,s/eps) with gamma(eps .)
        eps, s, t, lam = 0.25, 0.1, 0.7, 0.4
        op = TimeDependentOperator(self.m, self.g)
        a = evolution_multiplier(op, s, t, lam, eps)
        slow_g = APSignal(1.0, ((0.5, eps, -math.pi / 2),))
        op2 = TimeDependentOperator(self.m, slow_g)
        b = evolution_multiplier(op2, s / eps, t / eps, lam, 1.0)
        np.testing.assert_allclose(a, b, rtol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-5, 5), st.floats(0, 2), st.floats(0, 2), st.floats(0.05, 1), st.floats(0, 3))
    def test_two_parameter_law(self, s, d1, d2, eps, lam):
        op = TimeDependentOperator(self.m, self.g)
        r, t = s + d1, s + d1 + d2
        full = evolution_multiplier(op, s, t, lam, eps)
        split = evolution_multiplier(op, r, t, lam, eps) * evolution_multiplier(op, s, r, lam, eps)
        assert np.max(np.abs(full - split)) < 1e-12

    def test_rejects_reversed_interval(self):
        op = TimeDependentOperator(self.m, self.g)
        with pytest.raises(ValueError):
            evolution_multiplier(op, 1.0, 0.5)

    def test_gamma_bounds_enforced(self):
        with pytest.raises(ValueError):
            TimeDependentOperator(self.m, APSignal.sine(1.5, 1.0, offset=1.0))
        with pytest.raises(ValueError):
            TimeDependentOperator(self.m, self.g, gamma_bounds=(0.8, 1.2))


class TestPsi:
    def setup_method(self):
        self.b = eigenpairs("dirichlet", 8)
        self.m = SpectralModel.power_law(self.b)

    def test_zero_drift(self, rng):
        op = TimeDependentOperator(self.m, 1.0)
        times = np.linspace(0, 1, 11)
        path = rng.standard_normal((11, 8))
        assert np.all(psi_convolution(op, times, path, 0, 1) == 0)

    def test_too_few_samples(self):
        op = TimeDependentOperator(self.m, 1.0)
        with pytest.raises(ValueError):
            psi_convolution(op, [0.0], np.zeros((1, 8)), 0, 0)

    def test_constant_path_against_refined_quadrature(self):
        op = TimeDependentOperator(self.m, 1.0, [DriftTerm(APSignal.sine(1.0, 2.0, offset=0.5))])
        u = np.zeros(8)
        u[0] = 1.0

        def run(n):
            times = np.linspace(0, 0.1, n + 1)
            return psi_convolution(op, times, np.tile(u, (n + 1, 1)), 0, 0.1)
        a, b = run(400), run(800)
        ref = b + (b - a) / 3  # Richardson on the O(h^2) trapezoid
        assert np.max(np.abs(b - ref)) / np.max(np.abs(ref)) < 1e-6

    def test_bound_decreases_in_shift(self):
        op = TimeDependentOperator(self.m, 1.0, [DriftTerm(APSignal.constant(1.0))])
        times = np.linspace(0, 1, 401)
        u = np.zeros(8)
        u[0] = 1.0
        path = np.tile(u, (401, 1))
        sup = [float(self.b.sup_norm(psi_convolution(op, times, path, 0, 1, shift=lam)))
               for lam in (1, 10, 100)]
        assert sup[0] > sup[1] > sup[2]


class TestNemytskii:
    def setup_method(self):
        self.b = eigenpairs("neumann", 8)

    def test_pointwise_arithmetic(self):
        c = from_config({"b1": {"slow_poly": [0, 0, 0, -1], "fast": 1.0}})
        x = self.b.constant_coeffs(1.0)
        y = self.b.constant_coeffs(2.0)
        out = nemytskii_apply(c, "B1", self.b, x, y, spectral=False)
        np.testing.assert_allclose(out, 1.0, atol=1e-12)

    def test_dissipative_cubic_sign(self, rng):
        b = eigenpairs("dirichlet", 8)
        c = from_config({"b2": {"damping": 1.0, "poly": [0, 0, 0, -1]}})
        for _ in range(50):
            x, y, k = rng.standard_normal((3, 8))
            d = (nemytskii_apply(c, "B2", b, x, y + k, spectral=False)
                 - nemytskii_apply(c, "B2", b, x, y, spectral=False))
            assert np.sum(d * b.to_nodal(k)) <= 1e-12

    def test_growth_envelope(self, rng):
        b = eigenpairs("dirichlet", 8)
        c = from_config({"b1": {"slow_poly": [0, 0, 0, -1], "fast": 1.0}})
        x = rng.standard_normal((1000, 8))
        y = rng.standard_normal((1000, 8))
        lhs = np.max(np.abs(nemytskii_apply(c, "B1", b, x, y, spectral=False)), axis=-1)
        rhs = 1 + b.sup_norm(x) ** c.m1 + b.sup_norm(y)
        c_fit = np.max(lhs / rhs)
        assert c_fit <= 1.0 + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 32), st.floats(-3, 3))
    def test_locality(self, j, bump):
        b = eigenpairs("dirichlet", 8)
        c = from_config({"b1": {"slow_poly": [0.3, 0, 0, -1], "fast": 2.0}})
        xn = np.sin(b.grid.nodes)
        yn = np.cos(b.grid.nodes)
        xi = b.grid.nodes
        base = c.b1(xi, xn, yn)
        j = j % len(xi)
        xp = xn.copy()
        xp[j] += bump
        diff = c.b1(xi, xp, yn) - base
        others = np.delete(diff, j)
        assert np.all(others == 0)

    def test_unknown_operator(self):
        c = from_config({})
        with pytest.raises(ValueError):
            nemytskii_apply(c, "B3", self.b, np.zeros(8), np.zeros(8))
