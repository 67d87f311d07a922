"""
Exponential Euler time stepping
===============================

All solvers advance spectral coefficients of whole ensembles at once; the
leading array axis indexes ensemble members and each member draws its noise
from its own stream.

Within a step ``[r, r + h]`` every mode is advanced as

.. math::

    v_k \\leftarrow e^{-a_k h} v_k + \\frac{1 - e^{-a_k h}}{a_k} N_k
        + \\sqrt{\\frac{1 - e^{-2 a_k h}}{2 a_k}}\\, S_k,

where ``a_k`` is the mean linear rate over the step (elliptic part, the fixed
damping ``alpha`` and the split-off linear damping of ``b2``), ``N`` is the
projected explicit drift at the left endpoint and ``S`` the projected product
of the diffusion coefficient with unit-time noise. The linear part and, for
additive noise, the stochastic convolution are exact.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from .coefficients import CoefficientSet
from .noise import FAST, SLOW, global_step, standard_normals, two_sided_normals
from .spectral import SpectralModel, TimeDependentOperator, rowdot

__all__ = [
    "BlowUpError",
    "SlowFastConfig",
    "TrajectoryRecord",
    "FastStepper",
    "SlowStepper",
    "fast_path",
    "integrate_fast_frozen",
    "integrate_coupled",
    "integrate_averaged",
    "increment_regularity_probe",
    "RegularityFit",
]

logger = logging.getLogger(__name__)

BLOWUP = 1e6


class BlowUpError(RuntimeError):
    """Sup norm left the guard or became non-finite."""

    def __init__(self, message, member=None, stream=None, time=None):
        super().__init__(message)
        self.member = member
        self.stream = stream
        self.time = time


@dataclass
class SlowFastConfig:
    """Everything needed to integrate the slow-fast system.

    Time arguments of the fast coefficients are in fast time ``t / eps``.
    ``dt_frozen`` is the step of frozen-fast runs, measured in fast time.
    """

    slow: SpectralModel
    fast: TimeDependentOperator
    coeffs: CoefficientSet
    alpha: float = 1.0
    eps: float = 1.0
    dt_macro: float = 1e-3
    c_dt: float = 0.05
    dt_frozen: float = 0.01
    horizon: float = 1.0
    x0: np.ndarray | None = None
    y0: np.ndarray | None = None
    seed: int = 0
    store_full_fast: bool = False
    blowup: float = BLOWUP

    def __post_init__(self):
        K = self.slow.basis.n_modes
        if not self.slow.basis.same_as(self.fast.model.basis):
            raise ValueError("slow and fast models must share the spatial basis")
        if not 0 < self.eps <= 1:
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")
        if not 0 < self.c_dt <= 0.1:
            raise ValueError("c_dt must lie in (0, 0.1]")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not (self.dt_macro > 0 and self.dt_frozen > 0 and self.horizon > 0):
            raise ValueError("time steps and horizon must be positive")
        self.x0 = np.zeros(K) if self.x0 is None else np.asarray(self.x0, dtype=float)
        self.y0 = np.zeros(K) if self.y0 is None else np.asarray(self.y0, dtype=float)

    @property
    def basis(self):
        return self.slow.basis

    @property
    def micro_steps(self) -> int:
        return max(1, int(math.ceil(self.dt_macro / (self.c_dt * self.eps) - 1e-9)))

    @property
    def dt_fast(self) -> float:
        """``min(dt_macro, c_dt eps)``, adjusted to divide ``dt_macro``."""
        return self.dt_macro / self.micro_steps

    @property
    def n_macro(self) -> int:
        return int(round(self.horizon / self.dt_macro))

    def with_eps(self, eps: float) -> "SlowFastConfig":
        return replace(self, eps=eps)


@dataclass
class TrajectoryRecord:
    """Sampled ensemble trajectories; arrays are ``(n_times, n_members, K)``."""

    times: np.ndarray
    slow: np.ndarray | None = None
    fast: np.ndarray | None = None
    slow_norm: np.ndarray | None = None
    fast_norm: np.ndarray | None = None
    fast_times: np.ndarray | None = None
    streams: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("sample times must be strictly increasing")

    def to_csv(self, path, which: str = "slow"):
        data = self.slow if which == "slow" else self.fast
        times = self.times if which == "slow" or self.fast_times is None else self.fast_times
        K = data.shape[-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "member"] + [f"mode_{k}" for k in range(K)])
            for ti, block in zip(times, data):
                for m, row in enumerate(block):
                    w.writerow([repr(float(ti)), m] + [repr(float(c)) for c in row])

    def summary_lines(self):
        for i, t in enumerate(self.times):
            line = {"time": float(t)}
            if self.slow_norm is not None:
                line["slow_sup_mean"] = float(np.mean(self.slow_norm[i]))
                line["slow_sup_max"] = float(np.max(self.slow_norm[i]))
            if self.fast_norm is not None and self.fast_times is None:
                line["fast_sup_mean"] = float(np.mean(self.fast_norm[i]))
            yield line

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for line in self.summary_lines():
                fh.write(json.dumps(line) + "\n")


def _rates(a, h):
    """Exponential, phi-weight and noise weight for rates ``a`` over step ``h``."""
    E = np.exp(-a * h)
    small = np.abs(a * h) < 1e-8
    safe = np.where(small, 1.0, a)
    phi = np.where(small, h * (1 - 0.5 * a * h), (1 - E) / safe)
    var = np.where(small, h * (1 - a * h), (1 - E * E) / (2 * safe))
    return E, phi, np.sqrt(var)


def _guard(nodal, limit, streams, time):
    peak = np.max(np.abs(nodal), axis=-1)
    bad = ~(peak <= limit)
    if np.any(bad):
        m = int(np.flatnonzero(bad)[0])
        stream = int(streams[m]) if streams is not None else None
        raise BlowUpError(f"sup norm {peak[m]:.3g} exceeded the guard {limit:g} at t={time:.6g} "
                          f"(member {m}, stream {stream})", member=m, stream=stream, time=time)


class FastStepper:
    """One exponential Euler step of the frozen-fast equation in fast time.

    ``x_nodal`` is the (frozen) slow field on the grid; ``z`` are standard
    normals of shape ``(N, K)``.
    """

    def __init__(self, cfg: SlowFastConfig, h: float, coeffs: CoefficientSet | None = None):
        self.cfg = cfg
        self.op = cfg.fast
        self.coeffs = coeffs or cfg.coeffs
        self.h = h
        self.basis = cfg.basis
        self.xi = self.basis.grid.nodes
        self.lam = self.op.model.noise
        self.base_rate = cfg.alpha + self.coeffs.b2_damping
        self._const = None
        if self.op.gamma.is_constant:
            self._const = _rates(self.op.gamma.offset * self.op.model.alphas + self.base_rate, h)
        self._lam_nodal = self.basis.funcs * self.lam[None, :]

    def factors(self, tau):
        if self._const is not None:
            return self._const
        g = self.op.gamma_integral(tau, tau + self.h, self.h)
        return _rates(g / self.h * self.op.model.alphas + self.base_rate, self.h)

    def drift(self, tau, v, vn, x_nodal):
        d = self.coeffs.b2_rest(tau, self.xi, x_nodal, vn)
        if self.op.has_drift:
            d = d + self.op.first_order_nodal(tau, v)
        return self.basis.to_spectral(d)

    def noise(self, tau, vn, z):
        c = self.coeffs
        if c.g2_zero:
            return 0.0
        if c.g2_constant:
            return float(c.g2(tau, 0.0, np.zeros(1))[0]) * self.lam * z
        w = rowdot(z, self._lam_nodal)
        return self.basis.to_spectral(c.g2(tau, self.xi, vn) * w)

    def step(self, tau, v, vn, x_nodal, z):
        E, phi, sig = self.factors(tau)
        out = E * v + phi * self.drift(tau, v, vn, x_nodal)
        if z is not None:
            out = out + sig * self.noise(tau, vn, z)
        return out


class SlowStepper:
    """Exponential Euler step for the slow component over ``dt_macro``."""

    def __init__(self, cfg: SlowFastConfig, h: float | None = None, coeffs: CoefficientSet | None = None):
        self.cfg = cfg
        self.coeffs = coeffs or cfg.coeffs
        self.h = h or cfg.dt_macro
        self.basis = cfg.basis
        self.xi = self.basis.grid.nodes
        self.lam = cfg.slow.noise
        self.E, self.phi, self.sig = _rates(cfg.slow.alphas, self.h)
        self._lam_nodal = self.basis.funcs * self.lam[None, :]

    def noise(self, un, z):
        c = self.coeffs
        if c.g1_zero:
            return 0.0
        if c.g1_constant:
            return float(c.g1(0.0, np.zeros(1))[0]) * self.lam * z
        return self.basis.to_spectral(c.g1(self.xi, un) * rowdot(z, self._lam_nodal))

    def step(self, u, un, drift, z):
        out = self.E * u + self.phi * drift
        if z is not None:
            out = out + self.sig * self.noise(un, z)
        return out


def _members(arr, n):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = np.broadcast_to(arr, (n, arr.shape[0]))
    return np.array(arr, dtype=float)


def _streams(streams):
    return np.atleast_1d(np.asarray(streams, dtype=np.int64))


def fast_path(cfg: SlowFastConfig, x, s: float, t: float, y, streams, h: float | None = None,
              coeffs: CoefficientSet | None = None, noise: bool = True, origin: float = 0.0):
    """Iterate the frozen-fast equation from ``s`` to ``t`` (fast time).

    Yields ``(tau, v, v_nodal)`` at every grid time, ``s`` and ``t`` included.
    ``x`` is a coefficient array or a callable ``tau -> coefficients``; the
    global grid ``n h`` fixes the noise cells, so runs with the same ``h``
    share increments on overlapping intervals. Negative cells draw from the
    time-reversed branch. ``origin`` shifts the grid to ``origin + n h`` so
    that off-grid times can be hit exactly; ``s`` and ``t`` must lie on it.
    """
    if s > t:
        raise ValueError("need s <= t")
    h = h or cfg.dt_frozen
    streams = _streams(streams)
    N, K = len(streams), cfg.basis.n_modes
    n0, n1 = global_step(s - origin, h), global_step(t - origin, h)
    stepper = FastStepper(cfg, h, coeffs)
    basis = cfg.basis
    v = _members(y, N)
    x_fn = x if callable(x) else None
    xn = None if x_fn else basis.to_nodal(_members(x, N))
    lam_free = not noise or stepper.coeffs.g2_zero
    for n in range(n0, n1 + 1):
        tau = origin + n * h
        vn = basis.to_nodal(v)
        _guard(vn, cfg.blowup, streams, tau)
        yield tau, v, vn
        if n == n1:
            break
        if x_fn is not None:
            xn = basis.to_nodal(_members(x_fn(tau), N))
        z = None if lam_free else two_sided_normals(cfg.seed, FAST, streams, n, K)
        v = stepper.step(tau, v, vn, xn, z)


def integrate_fast_frozen(x, s: float, t: float, y, cfg: SlowFastConfig, streams=0,
                          h: float | None = None, record_every: int = 1,
                          coeffs: CoefficientSet | None = None, noise: bool = True,
                          origin: float = 0.0) -> TrajectoryRecord:
    """Frozen-fast trajectories ``v^x(.; s, y)`` recorded every ``record_every`` steps."""
    streams = _streams(streams)
    times, states, norms = [], [], []
    h = h or cfg.dt_frozen
    n0 = global_step(s - origin, h)
    n1 = global_step(t - origin, h)
    for tau, v, vn in fast_path(cfg, x, s, t, y, streams, h, coeffs, noise, origin):
        n = global_step(tau - origin, h)
        if (n - n0) % record_every == 0 or n == n1:
            times.append(tau)
            states.append(v.copy())
            norms.append(np.max(np.abs(vn), axis=-1))
    return TrajectoryRecord(np.array(times), fast=np.array(states), fast_norm=np.array(norms),
                            streams=streams, meta={"h": h, "s": s, "t": t})


def integrate_coupled(cfg: SlowFastConfig, streams=0, record_every: int = 1,
                      coeffs: CoefficientSet | None = None, fast_hook: Callable | None = None,
                      macro_hook: Callable | None = None) -> TrajectoryRecord:
    """Slow-fast system on ``[0, horizon]`` with macro/micro stepping.

    Each macro step freezes ``u`` at its left endpoint, runs ``micro_steps``
    fast sub-steps of ``dt_fast`` (coefficients evaluated at ``t / eps``) and
    feeds the sub-step average of ``B1(u, v)`` to the slow step. Fast noise
    uses global micro-step indices, slow noise macro-step indices.

    ``fast_hook(n_micro, t, u, u_nodal, v, v_nodal)`` is called before every
    micro step (used for co-simulated auxiliary processes).
    ``macro_hook(n, t, u, b1_mean)`` receives the projected sub-step average
    of ``B1`` that drives each slow step.
    """
    coeffs = coeffs or cfg.coeffs
    streams = _streams(streams)
    N, K = len(streams), cfg.basis.n_modes
    basis, xi = cfg.basis, cfg.basis.grid.nodes
    m = cfg.micro_steps
    hf = cfg.dt_fast
    fast = FastStepper(cfg, hf / cfg.eps, coeffs)
    slow = SlowStepper(cfg, cfg.dt_macro, coeffs)
    fast_noise = not coeffs.g2_zero
    slow_noise = not coeffs.g1_zero
    u = _members(cfg.x0, N)
    v = _members(cfg.y0, N)
    thin = 1 if cfg.store_full_fast else m
    times, us, vs, un_s, vn_s, ftimes = [], [], [], [], [], []

    def record(t, u, un, v, vn):
        times.append(t)
        us.append(u.copy())
        un_s.append(np.max(np.abs(un), axis=-1))
        vs.append(v.copy())
        vn_s.append(np.max(np.abs(vn), axis=-1))

    vn = basis.to_nodal(v)
    fast_rec = []
    for n in range(cfg.n_macro + 1):
        t = n * cfg.dt_macro
        un = basis.to_nodal(u)
        _guard(un, cfg.blowup, streams, t)
        if n % record_every == 0 or n == cfg.n_macro:
            record(t, u, un, v, vn)
        if n == cfg.n_macro:
            break
        acc = np.zeros_like(un)
        for j in range(m):
            nf = n * m + j
            tf = nf * hf
            vn = basis.to_nodal(v)
            _guard(vn, cfg.blowup, streams, tf)
            if cfg.store_full_fast:
                fast_rec.append((tf, v.copy()))
            if fast_hook is not None:
                fast_hook(nf, tf, u, un, v, vn)
            acc += coeffs.b1(xi, un, vn)
            z = standard_normals(cfg.seed, FAST, streams, nf, K) if fast_noise else None
            v = fast.step(tf / cfg.eps, v, vn, un, z)
        vn = basis.to_nodal(v)
        z1 = standard_normals(cfg.seed, SLOW, streams, n, K) if slow_noise else None
        drift = basis.to_spectral(acc / m)
        if macro_hook is not None:
            macro_hook(n, t, u, drift)
        u = slow.step(u, un, drift, z1)
    rec = TrajectoryRecord(np.array(times), slow=np.array(us), fast=np.array(vs),
                           slow_norm=np.array(un_s), fast_norm=np.array(vn_s), streams=streams,
                           meta={"eps": cfg.eps, "dt_macro": cfg.dt_macro, "dt_fast": hf,
                                 "micro_steps": m, "fast_thinning": thin})
    if cfg.store_full_fast:
        rec.meta["fast_full"] = fast_rec
    return rec


def integrate_averaged(cfg: SlowFastConfig, drift: Callable, streams=0, x=None,
                       horizon: float | None = None, record_every: int = 1,
                       dt: float | None = None) -> TrajectoryRecord:
    """Averaged equation ``du = [A1 u + Bbar(u)] dt + G1(u) dw^{Q1}``.

    ``drift`` maps coefficient arrays ``(N, K)`` to the coefficients of
    ``Bbar``; it is evaluated once per step at the left endpoint. The slow noise
    cells coincide with those of :func:`integrate_coupled` when ``dt`` equals
    ``cfg.dt_macro``.
    """
    streams = _streams(streams)
    N, K = len(streams), cfg.basis.n_modes
    dt = dt or cfg.dt_macro
    horizon = horizon or cfg.horizon
    basis = cfg.basis
    slow = SlowStepper(cfg, dt)
    slow_noise = not cfg.coeffs.g1_zero
    u = _members(cfg.x0 if x is None else x, N)
    n_steps = int(round(horizon / dt))
    times, us, norms = [], [], []
    for n in range(n_steps + 1):
        t = n * dt
        un = basis.to_nodal(u)
        _guard(un, cfg.blowup, streams, t)
        if n % record_every == 0 or n == n_steps:
            times.append(t)
            us.append(u.copy())
            norms.append(np.max(np.abs(un), axis=-1))
        if n == n_steps:
            break
        z1 = standard_normals(cfg.seed, SLOW, streams, n, K) if slow_noise else None
        u = slow.step(u, un, drift(u), z1)
    return TrajectoryRecord(np.array(times), slow=np.array(us), slow_norm=np.array(norms),
                            streams=streams, meta={"dt": dt})


@dataclass
class RegularityFit:
    exponent: float
    ci_low: float
    ci_high: float
    lags: np.ndarray
    moments: np.ndarray
    p: float
    theta: float | None = None


def increment_regularity_probe(record: TrajectoryRecord, p: float = 2.0, theta: float | None = None,
                               which: str = "slow", max_lag_fraction: float = 0.25,
                               basis=None) -> RegularityFit:
    """Log-log fit of ``E|u(r1) - u(r2)|_E^p`` against ``|r1 - r2|``.

    Returns the fitted Hoelder-in-time exponent (slope / p) with a 95%
    confidence band from the regression standard error. Sup norms are taken on
    the grid of ``basis`` if given, otherwise the l2 norm of coefficients.
    """
    data = record.slow if which == "slow" else record.fast
    times = record.times
    n = len(times)
    if n < 8:
        raise ValueError("insufficient samples for an increment fit")
    dt = times[1] - times[0]
    max_lag = max(4, int(max_lag_fraction * n))
    lags = np.unique(np.round(np.geomspace(1, max_lag, 12)).astype(int))
    moments = []
    for lag in lags:
        d = data[lag:] - data[:-lag]
        norm = basis.sup_norm(d) if basis is not None else np.sqrt(np.sum(d ** 2, axis=-1))
        moments.append(np.mean(norm ** p))
    moments = np.array(moments)
    if np.any(moments <= 0):
        raise ValueError("increments vanish; exponent undefined")
    fit = stats.linregress(np.log(lags * dt), np.log(moments))
    tcrit = stats.t.ppf(0.975, len(lags) - 2)
    slope, se = fit.slope, fit.stderr
    return RegularityFit(slope / p, (slope - tcrit * se) / p, (slope + tcrit * se) / p,
                         lags * dt, moments, p, theta)
