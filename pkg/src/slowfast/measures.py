"""
Evolution families of measures for the frozen-fast equation
===========================================================

For a frozen slow field ``x`` the fast equation forgets its initial state
exponentially fast, so the law at time ``t`` of the solution started far in the
past does not depend on the start. :func:`estimate_evolution_measure`
approximates that law by an ensemble of pullback runs started at
``t - T_burn`` from zero.

Distances between ensembles use a fixed dictionary of bounded, normalized
Lipschitz functionals (``tanh`` of a linear probe). The resulting ``d_hat`` is
only a lower bound of the dual-Lipschitz distance over all test functions.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .integrators import BlowUpError, SlowFastConfig, fast_path
from .spectral import SpectralBasis, eigenpairs

__all__ = [
    "EmpiricalMeasure",
    "TestFunctionDictionary",
    "DistanceReport",
    "MixingEstimate",
    "EvolutionResidual",
    "APMeasureReport",
    "HolderStats",
    "estimate_evolution_measure",
    "dual_lipschitz_distance",
    "evolution_property_residual",
    "mixing_decay_estimate",
    "ap_measure_diagnostic",
    "tightness_proxy",
    "default_burn_in",
]

logger = logging.getLogger(__name__)

# stream blocks (ids are 32-bit counter words)
_SHIFTED = 1 << 28
_COUPLED = 1 << 29
_FRESH = 1 << 30
_PILOT = 3 << 30


@dataclass
class EmpiricalMeasure:
    """Equal-weight ensemble of fields approximating the law of the fast state at ``time``."""

    time: float
    x: np.ndarray
    members: np.ndarray
    basis: SpectralBasis
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=float)
        if self.members.ndim != 2 or self.members.shape[0] < 2:
            raise ValueError("an empirical measure needs at least two members")
        if not np.all(np.isfinite(self.members)):
            raise ValueError("non-finite ensemble member")

    @property
    def n(self) -> int:
        return self.members.shape[0]

    def mean(self):
        return self.members.mean(axis=0)

    def sup_norms(self):
        return self.basis.sup_norm(self.members)

    def moment(self, p: float) -> float:
        """Empirical ``E |y|_E^p``."""
        return float(np.mean(self.sup_norms() ** p))

    def integrate(self, fn):
        """Mean and standard error of ``fn(members)`` (first axis = members)."""
        vals = np.asarray(fn(self.members), dtype=float)
        return vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(self.n)

    def save(self, path):
        """Write ``<path>.csv`` (member x mode matrix) and ``<path>.json`` (metadata)."""
        path = Path(path)
        np.savetxt(path.with_suffix(".csv"), self.members, delimiter=",",
                   header=",".join(f"mode_{k}" for k in range(self.members.shape[1])),
                   comments="", fmt="%.17g")
        g = self.basis.grid
        meta = {"time": self.time, "x": [float(c) for c in self.x],
                "basis": {"boundary": g.boundary, "length": g.length, "n_nodes": g.n_nodes,
                          "n_modes": self.basis.n_modes},
                "meta": self.meta}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1))

    @classmethod
    def load(cls, path) -> "EmpiricalMeasure":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        b = meta["basis"]
        basis = eigenpairs(b["boundary"], b["n_modes"], b["length"], b["n_nodes"])
        members = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        return cls(meta["time"], np.asarray(meta["x"]), members, basis, meta["meta"])


class TestFunctionDictionary:
    """Functionals ``f_j(y) = tanh(<y, phi_j>) / (1 + |phi_j|_L1)``.

    ``|<y - y', phi>| <= |phi|_L1 |y - y'|_E``, so each ``f_j`` satisfies
    ``sup|f| + Lip(f) <= 1`` with respect to the sup norm.

    Parameters
    ----------
    basis : SpectralBasis
    probes : array_like, optional
        Probe fields as coefficient rows. Default: eigenfunctions, pairwise
        sums of the first ``pair_modes`` eigenfunctions, and the constant field.
    """

    __test__ = False

    def __init__(self, basis: SpectralBasis, probes=None, labels=None, pair_modes: int = 4,
                 constant: bool = True):
        self.basis = basis
        K = basis.n_modes
        l1 = []
        if probes is None:
            rows, labels = [], []
            for k in range(K):
                rows.append(np.eye(K)[k])
                labels.append(f"e{k}")
            p = min(pair_modes, K)
            for i in range(p):
                for j in range(i + 1, p):
                    rows.append(np.eye(K)[i] + np.eye(K)[j])
                    labels.append(f"e{i}+e{j}")
            l1 = [self._l1(r) for r in rows]
            if constant:
                rows.append(basis.constant_coeffs(1.0))
                labels.append("const")
                l1.append(basis.length)
            probes = np.array(rows)
        else:
            probes = np.atleast_2d(np.asarray(probes, dtype=float))
            l1 = [self._l1(r) for r in probes]
            labels = labels or [f"probe{j}" for j in range(len(probes))]
        if len(probes) == 0:
            raise ValueError("dictionary is empty")
        self.probes = probes
        self.labels = list(labels)
        self.l1 = np.asarray(l1, dtype=float)
        self.scale = 1.0 / (1.0 + self.l1)

    def _l1(self, coeffs, n: int = 4097):
        xi = np.linspace(0.0, self.basis.length, n)
        vals = np.abs(self.basis.eval(xi) @ coeffs)
        return float(np.trapezoid(vals, xi))

    def __len__(self):
        return len(self.probes)

    def evaluate(self, members) -> np.ndarray:
        """Values ``(N, M)`` of every functional on every member."""
        return np.tanh(np.asarray(members) @ self.probes.T) * self.scale

    @property
    def lipschitz(self) -> np.ndarray:
        return self.l1 * self.scale


def _members(m):
    return m.members if isinstance(m, EmpiricalMeasure) else np.atleast_2d(np.asarray(m, float))


def _null_rms(cov, n_draws: int = 4000):
    """RMS of ``max_j |Z_j|`` for ``Z ~ N(0, cov)``, with a fixed generator."""
    w, V = np.linalg.eigh(cov)
    root = V * np.sqrt(np.clip(w, 0, None))
    z = np.random.default_rng(0).standard_normal((n_draws, len(w))) @ root.T
    return float(np.sqrt(np.mean(np.max(np.abs(z), axis=1) ** 2)))


@dataclass
class DistanceReport:
    """``value = max_j |mean f_j(mu1) - mean f_j(mu2)|`` with its Monte-Carlo scale.

    ``se`` holds per-functional standard errors of the difference and
    ``mc_error`` the RMS of ``d_hat`` when both ensembles come from the same
    law (Gaussian approximation with the estimated covariance).
    """

    value: float
    profile: np.ndarray
    se: np.ndarray
    mc_error: float
    argmax: int


def dual_lipschitz_distance(mu1, mu2, dictionary: TestFunctionDictionary,
                            paired: bool = False) -> DistanceReport:
    """Dictionary lower bound of the dual-Lipschitz distance between two ensembles.

    ``paired=True`` treats member ``i`` of both ensembles as a coupled pair
    (same noise) when computing standard errors.
    """
    if len(dictionary) == 0:
        raise ValueError("dictionary is empty")
    F1 = dictionary.evaluate(_members(mu1))
    F2 = dictionary.evaluate(_members(mu2))
    diff = F1.mean(axis=0) - F2.mean(axis=0)
    if paired:
        if F1.shape != F2.shape:
            raise ValueError("paired ensembles must have equal size")
        D = F1 - F2
        cov = np.atleast_2d(np.cov(D, rowvar=False)) / len(D)
    else:
        cov = (np.atleast_2d(np.cov(F1, rowvar=False)) / len(F1)
               + np.atleast_2d(np.cov(F2, rowvar=False)) / len(F2))
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    prof = np.abs(diff)
    j = int(np.argmax(prof))
    return DistanceReport(float(prof[j]), prof, se, _null_rms(cov), j)


def default_burn_in(cfg: SlowFastConfig, x=None, pilot: bool = True, N: int = 256) -> float:
    """``5 / delta_hat`` from a short pilot mixing fit, else ``5 / alpha``."""
    if pilot:
        K = cfg.basis.n_modes
        x = np.zeros(K) if x is None else np.asarray(x, float)
        y = np.zeros(K)
        y[0] = 1.0 + float(cfg.basis.sup_norm(x))
        h = cfg.dt_frozen
        lags = h * np.round(np.linspace(0.0, 2.0 / cfg.alpha, 9) / h)
        try:
            est = mixing_decay_estimate(x, y, cfg, lags, N=N, T_burn=5.0 / cfg.alpha,
                                        stream_offset=_PILOT)
            if est.conclusive:
                return 5.0 / est.rate
        except BlowUpError:
            raise
        except ValueError as exc:
            logger.info("pilot mixing fit failed: %s", exc)
    return 5.0 / cfg.alpha


def _origin(t, h):
    return t - h * math.floor(t / h + 1e-9)


def _run_to(cfg, x, s, times, y, streams, coeffs, origin):
    """States at each of ``times`` (sorted, on the grid) from ``y`` at ``s``."""
    times = sorted(times)
    h = cfg.dt_frozen
    out, want = {}, {round((t - origin) / h): t for t in times}
    try:
        for tau, v, vn in fast_path(cfg, x, s, times[-1], y, streams, h, coeffs, origin=origin):
            k = round((tau - origin) / h)
            if k in want:
                out[want[k]] = v.copy()
    except BlowUpError as exc:
        raise BlowUpError(f"{exc} [seed {cfg.seed}]", exc.member, exc.stream, exc.time) from None
    return [out[t] for t in times]


def _grid_time(t, origin, h):
    n = (t - origin) / h
    if abs(n - round(n)) > 1e-6:
        raise ValueError(f"time {t} is not on the fast grid {origin} + n*{h}")
    return origin + round(n) * h


def estimate_evolution_measure(x, t: float, cfg: SlowFastConfig, T_burn: float | None = None,
                               N: int = 2048, y0=None, stream_offset: int = 0, record_times=None,
                               coeffs=None):
    """Pullback ensemble ``v^x(t; t - T_burn, y0)`` over ``N`` noise streams.

    Parameters
    ----------
    x : array_like
        Frozen slow field (coefficients).
    t : float
        Target time (fast time units). ``record_times`` may add earlier
        times on the same grid; the grid is anchored at ``t``.
    T_burn : float, optional
        Pullback length; :func:`default_burn_in` when omitted.
    y0 : array_like, optional
        Initial state at ``t - T_burn`` (default zero).

    Returns
    -------
    EmpiricalMeasure, or a list of them ordered like ``record_times``.
    """
    K = cfg.basis.n_modes
    x = np.asarray(x, dtype=float)
    if T_burn is None:
        T_burn = default_burn_in(cfg, x)
    if not T_burn > 0:
        raise ValueError("T_burn must be positive")
    h = cfg.dt_frozen
    times = [t] if record_times is None else list(record_times)
    t_end = max(times)
    origin = _origin(t_end, h)
    times = [_grid_time(r, origin, h) for r in times]
    s = _grid_time(min(times) - h * math.ceil(T_burn / h - 1e-9), origin, h)
    streams = stream_offset + np.arange(N)
    y = np.zeros(K) if y0 is None else np.asarray(y0, float)
    order = np.argsort(times)
    states = _run_to(cfg, x, s, [times[i] for i in order], y, streams, coeffs, origin)
    meas = [None] * len(times)
    for i, st in zip(order, states):
        meas[i] = EmpiricalMeasure(times[i], x.copy(), st, cfg.basis,
                                   {"T_burn": float(times[i] - s), "dt_fast": h, "seed": cfg.seed,
                                    "streams": [int(stream_offset), int(stream_offset + N)]})
    return meas[0] if record_times is None else meas


@dataclass
class EvolutionResidual:
    residual: np.ndarray
    band: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def within(self) -> bool:
        return bool(np.all(self.residual <= self.band))


def evolution_property_residual(x, s: float, t: float, cfg: SlowFastConfig,
                                dictionary: TestFunctionDictionary | None = None, N: int = 2048,
                                T_burn: float | None = None, stream_offset: int = 0,
                                coeffs=None) -> EvolutionResidual:
    """``|int P_{s,t} phi d mu_s - int phi d mu_t|`` per dictionary functional.

    The left side continues every member of the pullback ensemble at ``s`` to
    ``t`` with fresh noise streams; the right side is the pullback ensemble at
    ``t`` on the original streams (so ``s == t`` gives zero). Bands are three
    standard errors of the member-paired differences. When ``t - s`` is not a
    whole number of fast steps the step is refined to make it one.
    """
    if s > t:
        raise ValueError("need s <= t")
    dictionary = dictionary or TestFunctionDictionary(cfg.basis)
    x = np.asarray(x, float)
    if T_burn is None:
        T_burn = default_burn_in(cfg, x)
    h = cfg.dt_frozen
    if t > s:
        n = math.ceil((t - s) / h - 1e-9)
        if abs((t - s) / h - n) > 1e-6:
            h = (t - s) / n
            cfg = replace(cfg, dt_frozen=h)
    origin = _origin(t, h)
    s = _grid_time(s, origin, h)
    mu_s = estimate_evolution_measure(x, s, cfg, T_burn, N, stream_offset=stream_offset,
                                      coeffs=coeffs)
    if t > s:
        fresh = stream_offset + _FRESH + np.arange(N)
        lhs_states = _run_to(cfg, x, s, [t], mu_s.members, fresh, coeffs, origin)[0]
    else:
        lhs_states = mu_s.members
    mu_t = estimate_evolution_measure(x, t, cfg, T_burn, N, stream_offset=stream_offset,
                                      coeffs=coeffs)
    F1 = dictionary.evaluate(lhs_states)
    F2 = dictionary.evaluate(mu_t.members)
    D = F1 - F2
    se = D.std(axis=0, ddof=1) / math.sqrt(N)
    return EvolutionResidual(np.abs(D.mean(axis=0)), 3 * se, F1.mean(axis=0), F2.mean(axis=0))


@dataclass
class MixingEstimate:
    """Exponential fit ``gap(lag) ~ prefactor * exp(-rate * lag)``.

    ``rate`` and ``prefactor`` are only meaningful when ``conclusive``.
    """

    rate: float
    prefactor: float
    r2: float
    lags: np.ndarray
    gaps: np.ndarray
    se: np.ndarray
    used: np.ndarray
    conclusive: bool
    note: str = ""


def mixing_decay_estimate(x, y, cfg: SlowFastConfig, lags, N: int = 2048,
                          dictionary: TestFunctionDictionary | None = None, s: float = 0.0,
                          T_burn: float | None = None, stream_offset: int = 0, coeffs=None,
                          min_r2: float = 0.9, snr: float = 3.0) -> MixingEstimate:
    """Decay of ``|P_{s,s+lag} f(y) - int f d mu_{s+lag}|`` with the lag.

    The runs from ``y`` and from the pullback ensemble at ``s`` share their
    noise after ``s`` (synchronous coupling), which removes most of the
    Monte-Carlo noise from the gap. ``y`` may be a single field or an ensemble
    of ``N`` fields. Lags whose gap is below ``snr`` paired standard errors are
    excluded from the log-linear fit. Lags are snapped to the fast grid.
    """
    lags = np.asarray(lags, dtype=float)
    if len(lags) < 4:
        raise ValueError("need at least four lags")
    if np.any(np.diff(lags) <= 0) or lags[0] < 0:
        raise ValueError("lags must be increasing and non-negative")
    dictionary = dictionary or TestFunctionDictionary(cfg.basis)
    x = np.asarray(x, float)
    if T_burn is None:
        T_burn = 5.0 / cfg.alpha
    h = cfg.dt_frozen
    lags = h * np.round(lags / h)
    if np.any(np.diff(lags) <= 0):
        raise ValueError("lags collapse on the fast grid")
    origin = _origin(s, h)
    mu = estimate_evolution_measure(x, s, cfg, T_burn, N, stream_offset=stream_offset,
                                    coeffs=coeffs)
    y = np.asarray(y, float)
    ys = np.broadcast_to(y, mu.members.shape) if y.ndim == 1 else y
    if ys.shape != mu.members.shape:
        raise ValueError("y ensemble must match N")
    fresh = stream_offset + _COUPLED + np.arange(N)
    both = np.concatenate([ys, mu.members])
    streams = np.concatenate([fresh, fresh])
    times = [_grid_time(s + lag, origin, h) for lag in lags]
    states = _run_to(cfg, x, s, times, both, streams, coeffs, origin)
    gaps, ses = [], []
    for st in states:
        F = dictionary.evaluate(st)
        D = F[:N] - F[N:]
        prof = np.abs(D.mean(axis=0))
        j = int(np.argmax(prof))
        gaps.append(prof[j])
        ses.append(D[:, j].std(ddof=1) / math.sqrt(N))
    gaps, ses = np.array(gaps), np.array(ses)
    used = (gaps > snr * ses) & (gaps > 0)
    if used.sum() < 4:
        return MixingEstimate(float("nan"), float("nan"), float("nan"), lags, gaps, ses, used, False,
                              "fewer than four lags above the noise level")
    fit = stats.linregress(lags[used], np.log(gaps[used]))
    r2 = fit.rvalue ** 2
    rate = -fit.slope
    ok = rate > 0 and r2 >= min_r2
    note = "" if ok else f"fit rejected (rate {rate:.3g}, R^2 {r2:.3f})"
    return MixingEstimate(float(rate), float(math.exp(fit.intercept)), float(r2), lags, gaps, ses,
                          used, bool(ok), note)


@dataclass
class APMeasureReport:
    shifts: np.ndarray
    times: np.ndarray
    discrepancy: np.ndarray  # (n_shifts, n_times)
    mc_error: np.ndarray     # (n_shifts, n_times)
    tolerance_factor: float

    @property
    def worst(self) -> np.ndarray:
        return self.discrepancy.max(axis=1)

    @property
    def accepted(self) -> np.ndarray:
        """Shifts whose discrepancy stays within ``tolerance_factor`` MC errors at every time."""
        return np.all(self.discrepancy <= self.tolerance_factor * self.mc_error, axis=1)


def ap_measure_diagnostic(x, times, shifts, cfg: SlowFastConfig,
                          dictionary: TestFunctionDictionary | None = None, N: int = 2048,
                          T_burn: float | None = None, tolerance_factor: float = 3.0,
                          stream_offset: int = 0, coeffs=None) -> APMeasureReport:
    """``d_hat(mu_{t + tau}, mu_t)`` for candidate shifts ``tau`` and sample times ``t``.

    The two ensembles use disjoint stream blocks, so ``tau = 0`` measures the
    pure Monte-Carlo fluctuation.
    """
    dictionary = dictionary or TestFunctionDictionary(cfg.basis)
    x = np.asarray(x, float)
    if T_burn is None:
        T_burn = default_burn_in(cfg, x)
    times = np.asarray(times, float)
    shifts = np.asarray(shifts, float)
    base = {}
    for t in times:
        base[t] = estimate_evolution_measure(x, t, cfg, T_burn, N, stream_offset=stream_offset,
                                             coeffs=coeffs)
    disc = np.zeros((len(shifts), len(times)))
    mce = np.zeros_like(disc)
    for i, tau in enumerate(shifts):
        for j, t in enumerate(times):
            other = estimate_evolution_measure(x, t + tau, cfg, T_burn, N,
                                               stream_offset=stream_offset + _SHIFTED,
                                               coeffs=coeffs)
            rep = dual_lipschitz_distance(other, base[t], dictionary)
            disc[i, j] = rep.value
            mce[i, j] = rep.mc_error
    return APMeasureReport(shifts, times, disc, mce, tolerance_factor)


@dataclass
class HolderStats:
    theta: float
    seminorms: np.ndarray
    sup_norms: np.ndarray
    quantiles: dict

    @property
    def norms(self) -> np.ndarray:
        return self.sup_norms + self.seminorms


def holder_seminorm(values, points, theta: float) -> np.ndarray:
    """``max_{i != j} |f(xi_i) - f(xi_j)| / |xi_i - xi_j|^theta`` for rows of ``values``."""
    values = np.atleast_2d(values)
    d = np.abs(points[:, None] - points[None, :])
    iu = np.triu_indices(len(points), 1)
    w = d[iu] ** (-theta)
    out = np.empty(len(values))
    for i, row in enumerate(values):
        out[i] = np.max(np.abs(row[:, None] - row[None, :])[iu] * w)
    return out


def tightness_proxy(ensemble, theta: float, basis: SpectralBasis | None = None,
                    quantiles=(0.5, 0.9, 0.99), n_points: int | None = None) -> HolderStats:
    """Quantiles of the discrete Hoelder seminorm of the ensemble members.

    Fields are evaluated on a uniform grid of ``[0, L]`` including both
    endpoints.
    """
    if not 0 < theta < 0.5:
        raise ValueError("theta must lie in (0, 1/2)")
    if isinstance(ensemble, EmpiricalMeasure):
        basis = ensemble.basis
    if basis is None:
        raise ValueError("a basis is needed for raw coefficient arrays")
    members = _members(ensemble)
    n_points = n_points or max(65, 4 * basis.n_modes + 1)
    pts = np.linspace(0.0, basis.length, n_points)
    vals = members @ basis.eval(pts).T
    semi = holder_seminorm(vals, pts, theta)
    sup = np.max(np.abs(vals), axis=1)
    q = {float(p): float(np.quantile(semi, p)) for p in quantiles}
    return HolderStats(theta, semi, sup, q)
