"""
Spectral discretization on an interval
======================================

Everything lives on ``D = (0, L)`` with Dirichlet or Neumann boundary
conditions. The second-derivative operator and the noise covariances are
simultaneously diagonal in the sine (Dirichlet) or cosine (Neumann) basis, so
semigroups and evolution operators act as per-mode multipliers.

Nonlinear coefficients are applied pseudo-spectrally: fields are evaluated on
a collocation grid of at least ``2K + 1`` nodes, composed pointwise and
projected back onto the ``K`` retained modes with a quadrature that is exact
for products of retained modes.

Coefficient arrays carry modes on their last axis, so an ensemble of ``N``
fields is simply an ``(N, K)`` array.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

from .signals import APSignal

__all__ = [
    "SpatialGrid",
    "SpectralBasis",
    "SpectralModel",
    "FieldState",
    "TimeDependentOperator",
    "DriftTerm",
    "eigenpairs",
    "semigroup_apply",
    "evolution_apply",
    "evolution_multiplier",
    "psi_convolution",
    "sup_norm",
]

BOUNDARIES = ("dirichlet", "neumann")


def rowdot(a, m) -> np.ndarray:
    """``a @ m.T`` computed row by row, bitwise independent of the number of rows."""
    return np.einsum("...k,nk->...n", np.asarray(a), m)


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform collocation grid on ``[0, length]``.

    Dirichlet grids hold the interior nodes ``j L / (n + 1)``; Neumann grids
    include both endpoints, ``j L / (n - 1)``. The quadrature weights make the
    discrete inner product exact for the retained eigenfunctions.
    """

    length: float
    n_nodes: int
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unsupported boundary kind {self.boundary!r}")
        if not self.length > 0:
            raise ValueError("length must be positive")
        if self.n_nodes < 2:
            raise ValueError("need at least two nodes")

    @property
    def nodes(self) -> np.ndarray:
        n, L = self.n_nodes, self.length
        if self.boundary == "dirichlet":
            return L * np.arange(1, n + 1) / (n + 1)
        return L * np.arange(n) / (n - 1)

    @property
    def weights(self) -> np.ndarray:
        n, L = self.n_nodes, self.length
        if self.boundary == "dirichlet":
            return np.full(n, L / (n + 1))
        w = np.full(n, L / (n - 1))
        w[[0, -1]] *= 0.5
        return w


class SpectralBasis:
    """Eigenpairs of ``d^2/dxi^2`` on the grid.

    ``alphas[k]`` are the (nonnegative) eigenvalues of ``-d^2/dxi^2``;
    ``funcs`` samples the orthonormal eigenfunctions on the grid, with shape
    ``(n_nodes, K)``; ``derivs`` samples their first derivatives.
    """

    def __init__(self, grid: SpatialGrid, n_modes: int):
        if n_modes < 1:
            raise ValueError("need at least one mode")
        if grid.n_nodes < 2 * n_modes + 1:
            raise ValueError(f"{grid.n_nodes} nodes cannot resolve {n_modes} modes "
                             f"without aliasing (need >= {2 * n_modes + 1})")
        self.grid = grid
        self.n_modes = n_modes
        self.wavenumbers = self._wavenumbers()
        self.alphas = self.wavenumbers ** 2
        xi = grid.nodes
        self.funcs = self.eval(xi)
        self.derivs = self.eval_derivative(xi)
        # projection: c = (f * w) @ funcs
        self._proj = grid.weights[:, None] * self.funcs
        self.sup_eigen = np.max(np.abs(self.eval(np.linspace(0, grid.length, 4097))), axis=0)

    @property
    def boundary(self) -> str:
        return self.grid.boundary

    @property
    def length(self) -> float:
        return self.grid.length

    def _wavenumbers(self):
        L, K = self.grid.length, self.n_modes
        if self.boundary == "dirichlet":
            return np.arange(1, K + 1) * math.pi / L
        return np.arange(0, K) * math.pi / L

    def eval(self, xi) -> np.ndarray:
        """Eigenfunctions at arbitrary points, shape ``(len(xi), K)``."""
        xi = np.asarray(xi, dtype=float)[:, None]
        L, q = self.grid.length, self.wavenumbers[None, :]
        if self.boundary == "dirichlet":
            return math.sqrt(2 / L) * np.sin(q * xi)
        out = math.sqrt(2 / L) * np.cos(q * xi)
        out[:, 0] = 1 / math.sqrt(L)
        return out

    def eval_derivative(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)[:, None]
        L, q = self.grid.length, self.wavenumbers[None, :]
        if self.boundary == "dirichlet":
            return math.sqrt(2 / L) * q * np.cos(q * xi)
        return -math.sqrt(2 / L) * q * np.sin(q * xi)

    # einsum instead of matmul: BLAS picks different kernels for different row
    # counts, which would make a trajectory's bits depend on its batch
    def to_nodal(self, coeffs) -> np.ndarray:
        return rowdot(coeffs, self.funcs)

    def to_spectral(self, nodal) -> np.ndarray:
        return np.einsum("...n,nk->...k", np.asarray(nodal), self._proj)

    def derivative_nodal(self, coeffs) -> np.ndarray:
        return rowdot(coeffs, self.derivs)

    def gram(self) -> np.ndarray:
        return self.funcs.T @ self._proj

    def sup_norm(self, coeffs) -> np.ndarray:
        """Sup over the collocation nodes."""
        return np.max(np.abs(self.to_nodal(coeffs)), axis=-1)

    def l2_norm(self, coeffs) -> np.ndarray:
        return np.sqrt(np.sum(np.asarray(coeffs) ** 2, axis=-1))

    def constant_coeffs(self, value: float = 1.0) -> np.ndarray:
        """Exact L2 projection of a constant field on the retained modes."""
        L, K = self.length, self.n_modes
        if self.boundary == "neumann":
            c = np.zeros(K)
            c[0] = value * math.sqrt(L)
            return c
        k = np.arange(1, K + 1)
        return value * math.sqrt(2 / L) * (L / (k * math.pi)) * (1 - (-1.0) ** k)

    def same_as(self, other: "SpectralBasis") -> bool:
        return (self.grid == other.grid) and self.n_modes == other.n_modes


def eigenpairs(boundary: str, n_modes: int, length: float = math.pi,
               n_nodes: int | None = None) -> SpectralBasis:
    """Eigenpairs of the 1-D second-derivative operator.

    Dirichlet on ``(0, pi)`` gives ``alpha_k = k^2`` and
    ``e_k = sqrt(2/pi) sin(k xi)``; Neumann gives ``alpha_k = k^2`` for
    ``k = 0, 1, ...`` with a constant ``e_0``.
    """
    if boundary not in BOUNDARIES:
        raise ValueError(f"unsupported boundary kind {boundary!r}")
    if n_modes < 1 or not length > 0:
        raise ValueError("need K >= 1 and L > 0")
    if n_nodes is None:
        n_nodes = max(4 * n_modes, 2 * n_modes + 1)
    return SpectralBasis(SpatialGrid(float(length), int(n_nodes), boundary), int(n_modes))


def _check_h1(rho: float, beta: float):
    if not (rho > 2):
        raise ValueError(f"rho must lie in (2, inf], got {rho}")
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    ratio = beta if math.isinf(rho) else beta * (rho - 2) / rho
    if not ratio < 1:
        raise ValueError(f"beta (rho - 2) / rho = {ratio:.4g} must be < 1")


@dataclass
class SpectralModel:
    """Diagonal operator pair ``(A, Q)`` on a shared basis.

    ``A e_k = -alpha_k e_k`` with ``alpha_k = diffusivity * basis.alphas[k]``
    and ``Q e_k = noise[k] e_k``. ``rho`` and ``beta`` are the summability
    exponents; the constraint ``beta (rho - 2) / rho < 1`` is enforced.
    """

    basis: SpectralBasis
    noise: np.ndarray
    rho: float = 3.0
    beta: float = 0.6
    diffusivity: float = 1.0

    def __post_init__(self):
        self.noise = np.asarray(self.noise, dtype=float)
        if self.noise.shape != (self.basis.n_modes,):
            raise ValueError("need one noise eigenvalue per mode")
        if np.any(self.noise < 0):
            raise ValueError("noise eigenvalues must be nonnegative")
        if not self.diffusivity > 0:
            raise ValueError("diffusivity must be positive")
        _check_h1(self.rho, self.beta)

    @property
    def alphas(self) -> np.ndarray:
        return self.diffusivity * self.basis.alphas

    @property
    def kappa(self) -> float:
        lam = self.noise
        if math.isinf(self.rho):
            return float(np.sum((lam > 0) * self.basis.sup_eigen ** 2))
        return float(np.sum(lam ** self.rho * self.basis.sup_eigen ** 2))

    @property
    def zeta(self) -> float:
        a = self.alphas
        pos = a > 0
        return float(np.sum(a[pos] ** (-self.beta) * self.basis.sup_eigen[pos] ** 2))

    @classmethod
    def power_law(cls, basis: SpectralBasis, scale: float = 1.0, exponent: float = 1.0,
                  **kw) -> "SpectralModel":
        """Noise eigenvalues ``scale * k^-exponent`` (``k`` counted from 1)."""
        k = np.arange(1, basis.n_modes + 1, dtype=float)
        return cls(basis, scale * k ** (-exponent), **kw)


@dataclass
class FieldState:
    """A field on the interval held as spectral coefficients.

    Nodal values are derived on demand; ``from_nodal`` projects.
    """

    basis: SpectralBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape[-1] != self.basis.n_modes:
            raise ValueError("coefficient array does not match the basis")

    @classmethod
    def from_nodal(cls, basis: SpectralBasis, values) -> "FieldState":
        return cls(basis, basis.to_spectral(values))

    @classmethod
    def from_function(cls, basis: SpectralBasis, f: Callable) -> "FieldState":
        return cls.from_nodal(basis, f(basis.grid.nodes))

    @classmethod
    def mode(cls, basis: SpectralBasis, k: int, amplitude: float = 1.0) -> "FieldState":
        c = np.zeros(basis.n_modes)
        c[k] = amplitude
        return cls(basis, c)

    @property
    def nodal(self) -> np.ndarray:
        return self.basis.to_nodal(self.coeffs)

    def sup_norm(self):
        return self.basis.sup_norm(self.coeffs)

    def copy(self) -> "FieldState":
        return FieldState(self.basis, self.coeffs.copy())


def sup_norm(field: FieldState):
    return field.sup_norm()


def _coeffs(field):
    return field.coeffs if isinstance(field, FieldState) else np.asarray(field, dtype=float)


def semigroup_apply(model: SpectralModel, field, t: float, shift: float = 0.0):
    """``exp(t A - shift t)`` applied mode by mode."""
    if t < 0:
        raise ValueError("semigroup time must be nonnegative")
    out = _coeffs(field) * np.exp(-(model.alphas + shift) * t)
    return FieldState(model.basis, out) if isinstance(field, FieldState) else out


# first-order term L(t) u = l(t, xi) du/dxi with l(t, xi) = sum_p signal_p(t) profile_p(xi)

PROFILES = {
    "constant": lambda xi, k, L: np.ones_like(xi),
    "sin": lambda xi, k, L: np.sin(k * math.pi * xi / L),
    "cos": lambda xi, k, L: np.cos(k * math.pi * xi / L),
}


@dataclass(frozen=True)
class DriftTerm:
    signal: APSignal
    profile: str = "constant"
    wavenumber: int = 1

    def nodal_profile(self, basis: SpectralBasis) -> np.ndarray:
        if self.profile not in PROFILES:
            raise ValueError(f"unknown drift profile {self.profile!r}")
        return PROFILES[self.profile](basis.grid.nodes, self.wavenumber, basis.length)

    def to_dict(self):
        return {"signal": self.signal.to_dict(), "profile": self.profile,
                "wavenumber": self.wavenumber}

    @classmethod
    def from_dict(cls, d):
        return cls(APSignal.from_dict(d["signal"]), d.get("profile", "constant"),
                   int(d.get("wavenumber", 1)))


class TimeDependentOperator:
    """``A(t) = gamma(t) A + L(t)`` with ``L(t) u = l(t, xi) u'``.

    Parameters
    ----------
    model : SpectralModel
        Supplies ``A`` (through ``alphas``).
    gamma : APSignal
        Time-dependent diffusion factor, bounded in ``[gamma0, gamma1]``.
    drift : sequence of DriftTerm
        First-order transport velocity ``l(t, xi)``.
    gamma_bounds : (float, float), optional
        Declared ``(gamma0, gamma1)``. Defaults to the trigonometric envelope.
    """

    def __init__(self, model: SpectralModel, gamma: APSignal | float = 1.0,
                 drift: Sequence[DriftTerm] = (), gamma_bounds: tuple[float, float] | None = None,
                 gamma_primitive: bool = True):
        self.model = model
        self.gamma = gamma if isinstance(gamma, APSignal) else APSignal.constant(gamma)
        self.drift = tuple(drift)
        self._profiles = [d.nodal_profile(model.basis) for d in self.drift]
        self.use_primitive = gamma_primitive
        if gamma_bounds is None:
            osc = sum(abs(a) for a, _, _ in self.gamma.terms)
            gamma_bounds = (self.gamma.offset - osc, self.gamma.offset + osc)
        self.gamma_bounds = tuple(float(g) for g in gamma_bounds)
        self.check_gamma_bounds()

    def check_gamma_bounds(self, horizon: float = 200.0, n: int = 20001):
        g0, g1 = self.gamma_bounds
        if not (g0 > 0 and g1 >= g0):
            raise ValueError(f"gamma bounds must satisfy 0 < gamma0 <= gamma1, got {self.gamma_bounds}")
        ts = np.linspace(-horizon, horizon, n)
        vals = self.gamma(ts)
        if vals.min() < g0 - 1e-12 or vals.max() > g1 + 1e-12:
            raise ValueError(f"gamma leaves [{g0}, {g1}] on the sample grid")

    @property
    def has_drift(self) -> bool:
        return any(not (d.signal.is_constant and d.signal.offset == 0.0) for d in self.drift)

    @property
    def autonomous(self) -> bool:
        return self.gamma.is_constant and all(d.signal.is_constant for d in self.drift)

    def gamma_integral(self, s, t, dt: float | None = None):
        """``int_s^t gamma(r) dr``: closed form, else composite Simpson at ``dt / 4``."""
        if self.use_primitive:
            return self.gamma.integral(s, t)
        return simpson_integral(self.gamma, s, t, dt)

    def velocity(self, t) -> np.ndarray:
        if not self.drift:
            return np.zeros(self.model.basis.grid.n_nodes)
        return sum(d.signal(t) * p for d, p in zip(self.drift, self._profiles))

    def first_order_nodal(self, t, coeffs) -> np.ndarray:
        """Nodal values of ``l(t, .) u'``."""
        return self.velocity(t) * self.model.basis.derivative_nodal(coeffs)

    def first_order(self, t, coeffs) -> np.ndarray:
        """Spectral projection of ``L(t) u``."""
        if not self.drift:
            return np.zeros_like(np.asarray(coeffs, dtype=float))
        return self.model.basis.to_spectral(self.first_order_nodal(t, coeffs))


def simpson_integral(signal: Callable, s: float, t: float, dt: float | None = None) -> float:
    if t == s:
        return 0.0
    h = (dt or 1e-2) / 4
    n = max(2, int(math.ceil(abs(t - s) / h)))
    n += n % 2
    r = np.linspace(s, t, n + 1)
    return float(simpson(signal(r), x=r))


def evolution_multiplier(op: TimeDependentOperator, s: float, t: float, shift: float = 0.0,
                         eps: float = 1.0, dt: float | None = None) -> np.ndarray:
    """Per-mode factors of ``U_{shift,eps}(t, s)``.

    ``exp(-(Gamma(t, s) alpha_k + shift (t - s)) / eps)`` where ``Gamma`` is
    the time integral of ``gamma``.
    """
    if s > t:
        raise ValueError("evolution operator needs s <= t")
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = op.gamma_integral(s, t, dt)
    return np.exp(-(g * op.model.alphas + shift * (t - s)) / eps)


def evolution_apply(op: TimeDependentOperator, field, s: float, t: float, shift: float = 0.0,
                    eps: float = 1.0):
    out = _coeffs(field) * evolution_multiplier(op, s, t, shift, eps)
    return FieldState(op.model.basis, out) if isinstance(field, FieldState) else out


def psi_convolution(op: TimeDependentOperator, times, path, s: float, t: float,
                    shift: float = 0.0, eps: float = 1.0):
    """Trapezoidal ``(1/eps) int_s^t U_{shift,eps}(t, r) L(r) u(r) dr``.

    ``path`` holds coefficients of ``u`` at the uniform ``times`` covering
    ``[s, t]`` (first axis is time).
    """
    times = np.asarray(times, dtype=float)
    path = np.asarray(path, dtype=float)
    if len(times) < 2:
        raise ValueError("need at least two time samples")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if abs(times[0] - s) > 1e-12 or abs(times[-1] - t) > 1e-12:
        raise ValueError("time samples must span [s, t]")
    w = np.full(len(times), times[1] - times[0])
    w[[0, -1]] *= 0.5
    acc = np.zeros(path.shape[1:])
    for r, wr, u in zip(times, w, path):
        acc += wr * evolution_multiplier(op, r, t, shift, eps) * op.first_order(r, u)
    return acc / eps
