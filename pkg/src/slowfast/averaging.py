"""Averaged drift: ergodic and measure-based estimators, closed forms, truncation.

The averaged drift at a frozen slow field ``x`` is the long-time mean of
``B1(x, v)`` along the frozen-fast dynamics. Because the fast coefficients
are almost periodic in time, the limit is a Cesaro mean over time of the
expectation under the evolution family, not a single invariant-measure
average.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .coefficients import CoefficientSet, nemytskii_apply
from .integrators import SlowFastConfig, fast_path
from .measures import estimate_evolution_measure, default_burn_in
from .signals import mean_value

__all__ = [
    "AveragedDriftEstimate",
    "estimate_bbar_ergodic",
    "estimate_bbar_measure",
    "closed_form_bbar",
    "HMMDrift",
    "TruncatedCoefficients",
    "truncate_coefficients",
    "default_truncation_radius",
    "RegularityReport",
    "bbar_regularity_probe",
    "DeviationFit",
    "deviation_bound_fit",
    "growth_envelope",
]

logger = logging.getLogger(__name__)

_HMM_STREAMS = 1 << 27


@dataclass
class AveragedDriftEstimate:
    """Estimate of ``Bbar(x)`` as spectral coefficients.

    ``error`` for the ergodic estimator is the RMS over paths of the
    difference between full- and half-horizon averages, divided by
    ``sqrt(N_paths)``; ``se`` is the across-path standard error per mode.
    """

    x: np.ndarray
    value: np.ndarray
    horizon: float
    method: str
    error: float
    se: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    paths: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {"x": [float(c) for c in self.x], "value": [float(c) for c in self.value],
                "horizon": self.horizon, "method": self.method, "error": self.error,
                "se": None if self.se is None else [float(c) for c in self.se], "meta": self.meta}


def _window_average(cfg, x, s0, T, burn_in, streams, coeffs, checkpoints=(), noise=True):
    """Trapezoid time averages of ``B1(x, v)`` (nodal) over ``[s0, s0 + T']``.

    Returns a dict ``T' -> (N, n_nodes)`` for ``T' in checkpoints + (T,)``.
    """
    coeffs = coeffs or cfg.coeffs
    basis = cfg.basis
    xi = basis.grid.nodes
    h = cfg.dt_frozen
    x = np.asarray(x, float)
    xn = basis.to_nodal(x)
    marks = {int(round(c / h)): c for c in list(checkpoints) + [T]}
    n_end = max(marks)
    start = s0 - h * math.ceil(burn_in / h - 1e-9)
    origin = s0 - h * math.floor(s0 / h + 1e-9)
    acc = None
    prev = None
    out = {}
    for tau, v, vn in fast_path(cfg, x, start, s0 + n_end * h, 0.0 * x, streams, h, coeffs,
                                noise=noise, origin=origin):
        i = int(round((tau - s0) / h))
        if i < 0:
            continue
        val = coeffs.b1(xi, xn, vn)
        if acc is None:
            acc = np.zeros_like(val)
        else:
            acc += 0.5 * h * (prev + val)
        prev = val
        if i in marks:
            out[marks[i]] = acc / (i * h)
    return out


def estimate_bbar_ergodic(x, T: float, cfg: SlowFastConfig, s0: float = 0.0, N_paths: int = 64,
                          burn_in: float | None = None, coeffs: CoefficientSet | None = None,
                          stream_offset: int = 0, checkpoints=()) -> AveragedDriftEstimate:
    """Ensemble mean of the time averages ``(1/T) int_{s0}^{s0+T} B1(x, v^x(t)) dt``.

    Each path starts from zero at ``s0 - burn_in``. When ``b1`` does not
    depend on the fast variable the composition ``B1(x, .)`` is returned
    directly (zero error). ``checkpoints`` adds estimates for shorter
    horizons along the same paths (in ``meta["checkpoints"]``).
    """
    if not T > 0:
        raise ValueError("T must be positive")
    coeffs = coeffs or cfg.coeffs
    basis = cfg.basis
    x = np.asarray(x, float)
    if coeffs.b1_y_free:
        val = nemytskii_apply(coeffs, "B1", basis, x, np.zeros_like(x))
        return AveragedDriftEstimate(x, val, T, "ergodic-trajectory", 0.0, np.zeros_like(val))
    if burn_in is None:
        burn_in = default_burn_in(cfg, x, pilot=False)
    streams = stream_offset + np.arange(N_paths)
    cps = sorted(set(list(checkpoints) + [T / 2]))
    avgs = _window_average(cfg, x, s0, T, burn_in, streams, coeffs, cps)
    full = basis.to_spectral(avgs[T])
    half = basis.to_spectral(avgs[T / 2])
    value = full.mean(axis=0)
    se = full.std(axis=0, ddof=1) / math.sqrt(N_paths) if N_paths > 1 else np.zeros_like(value)
    d = basis.sup_norm(full - half)
    err = float(np.sqrt(np.mean(d ** 2) / N_paths))
    meta = {"N_paths": N_paths, "s0": s0, "burn_in": burn_in,
            "checkpoints": {float(c): basis.to_spectral(avgs[c]).mean(axis=0).tolist()
                            for c in checkpoints}}
    return AveragedDriftEstimate(x, value, T, "ergodic-trajectory", err, se, meta, full)


def estimate_bbar_measure(x, times, cfg: SlowFastConfig, N: int = 2048,
                          T_burn: float | None = None, coeffs: CoefficientSet | None = None,
                          stream_offset: int = 0) -> AveragedDriftEstimate:
    """Mean value over ``times`` of ``int B1(x, y) mu_t(dy)``.

    ``times`` is a uniform grid; the measures are pullback ensembles recorded
    along one set of paths. A single time is allowed for autonomous
    coefficients. ``error`` adds the half-window discrepancy of the mean
    value and three standard errors of the Monte-Carlo integrals.
    """
    coeffs = coeffs or cfg.coeffs
    basis = cfg.basis
    x = np.asarray(x, float)
    times = np.atleast_1d(np.asarray(times, float))
    if T_burn is None:
        T_burn = default_burn_in(cfg, x, pilot=False)
    xi = basis.grid.nodes
    xn = basis.to_nodal(x)
    if len(times) > 1:
        dt = times[1] - times[0]
        if not np.allclose(np.diff(times), dt, rtol=1e-9, atol=1e-12):
            raise ValueError("time grid must be uniform")
        h = cfg.dt_frozen
        n = max(1, round(dt / h))
        if abs(n * h - dt) > 1e-9:
            cfg = replace(cfg, dt_frozen=dt / math.ceil(dt / h - 1e-9))
    meas = estimate_evolution_measure(x, times[-1], cfg, T_burn, N, stream_offset=stream_offset,
                                      record_times=list(times), coeffs=coeffs)
    inner, ses = [], []
    for mu in meas:
        vals = basis.to_spectral(coeffs.b1(xi, xn, basis.to_nodal(mu.members)))
        inner.append(vals.mean(axis=0))
        ses.append(vals.std(axis=0, ddof=1) / math.sqrt(N))
    inner = np.array(inner)
    se = np.mean(ses, axis=0)
    if len(times) == 1:
        value, mv_err = inner[0], 0.0
        span = 0.0
    else:
        span = float(times[-1] - times[0])
        mv = mean_value(inner, span, times[0], times)
        value, mv_err = np.asarray(mv.value), mv.error
    err = float(mv_err + 3 * np.max(se))
    return AveragedDriftEstimate(x, value, span, "measure-average", err, se,
                                 {"N": N, "T_burn": T_burn, "n_times": len(times),
                                  "inner": inner.tolist()})


def closed_form_bbar(cfg: SlowFastConfig, coeffs: CoefficientSet | None = None):
    """Closed-form averaged drift for affine fast dynamics.

    Requires ``b1 = p(s1) + q s2``, ``b2 = -l2 s2 + c(t) s1`` with constant
    ``gamma`` and no first-order term. Then
    ``Bbar(x) = P[p(x)] + q * mean(c) * x_k / (gamma alpha_k + alpha + l2)``.

    Returns a callable mapping ``(N, K)`` coefficients to ``(N, K)``.
    """
    coeffs = coeffs or cfg.coeffs
    op = cfg.fast
    if not coeffs.linear_bbar_form:
        raise ValueError("no closed form: b1/b2 are not of the affine form")
    if not op.gamma.is_constant or op.has_drift:
        raise ValueError("no closed form: gamma must be constant and the first-order term absent")
    rate = op.gamma.offset * op.model.alphas + cfg.alpha + coeffs.b2_damping
    mult = coeffs.b1_fast * coeffs.b2_coupling.offset / rate
    basis = cfg.basis
    xi = basis.grid.nodes
    poly = coeffs.b1_slow_poly
    has_poly = any(poly)

    def drift(u):
        u = np.asarray(u, float)
        out = mult * u
        if has_poly:
            out = out + basis.to_spectral(coeffs.b1(xi, basis.to_nodal(u), 0.0 * basis.to_nodal(u)))
        return out
    drift.multiplier = mult
    return drift


class HMMDrift:
    """On-demand averaged drift from short bursts of frozen-fast simulation.

    Each evaluation runs ``n_micro`` paths over ``t_micro`` (default
    ``10 / delta`` with ``delta = alpha + b2 damping``). Streams are derived
    from a hash of the quantized input so results do not depend on call
    order. The optional cache stores estimates keyed by coefficients rounded
    to ``quantum``.
    """

    def __init__(self, cfg: SlowFastConfig, n_micro: int = 64, t_micro: float | None = None,
                 burn_in: float | None = None, cache: bool = False, quantum: float = 1e-3,
                 coeffs: CoefficientSet | None = None):
        self.cfg = cfg
        self.coeffs = coeffs or cfg.coeffs
        rate = cfg.alpha + self.coeffs.b2_damping
        self.n_micro = n_micro
        self.t_micro = t_micro or 10.0 / rate
        self.burn_in = burn_in if burn_in is not None else 5.0 / rate
        self.cache = {} if cache else None
        self.quantum = quantum
        self.calls = 0

    def _key(self, x):
        q = np.round(np.asarray(x) / self.quantum).astype(np.int64)
        return q.tobytes()

    def _stream(self, key):
        return int.from_bytes(hashlib.sha256(key).digest()[:3], "little") * 64 + _HMM_STREAMS

    def estimate(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        key = self._key(x)
        if self.cache is not None and key in self.cache:
            return self.cache[key]
        if self.cache is not None:
            x = np.round(x / self.quantum) * self.quantum
        self.calls += 1
        est = estimate_bbar_ergodic(x, self.t_micro, self.cfg, N_paths=self.n_micro,
                                    burn_in=self.burn_in, coeffs=self.coeffs,
                                    stream_offset=self._stream(key))
        if self.cache is not None:
            self.cache[key] = est.value
        return est.value

    def __call__(self, u):
        u = np.atleast_2d(np.asarray(u, float))
        return np.array([self.estimate(row) for row in u])


@dataclass
class TruncatedCoefficients:
    """Coefficients with the slow argument clamped to ``[-radius, radius]``."""

    radius: float
    coeffs: CoefficientSet
    base: CoefficientSet

    def lipschitz_scan(self, which: str = "b1", span: float | None = None, n: int = 2001,
                       fast_value: float = 0.0, t: float = 0.0) -> tuple[float, float]:
        """Largest difference quotient in ``s1`` over ``[-span, span]``: (truncated, original)."""
        span = span or 4 * self.radius
        s = np.linspace(-span, span, n)
        xi = np.zeros_like(s)
        y = np.full_like(s, fast_value)

        def f(c):
            if which == "b1":
                return c.b1(xi, s, y)
            if which == "b2":
                return c.b2(t, xi, s, y)
            if which == "g1":
                return c.g1(xi, s)
            raise ValueError(which)
        ds = s[1] - s[0]
        return (float(np.max(np.abs(np.diff(f(self.coeffs)))) / ds),
                float(np.max(np.abs(np.diff(f(self.base)))) / ds))


def truncate_coefficients(coeffs: CoefficientSet, n: float) -> TruncatedCoefficients:
    return TruncatedCoefficients(float(n), coeffs.truncated(n), coeffs)


def default_truncation_radius(cfg: SlowFastConfig) -> float:
    b = cfg.basis
    return 4.0 * (1.0 + float(b.sup_norm(cfg.x0)) + float(b.sup_norm(cfg.y0)))


@dataclass
class RegularityReport:
    quotients: np.ndarray      # nan where excluded
    pairings: np.ndarray
    inconclusive: np.ndarray
    degenerate: np.ndarray
    radii: np.ndarray
    lipschitz_by_radius: dict
    pairing_constant: float
    notes: list


def bbar_regularity_probe(pairs, drift, basis, radii=None) -> RegularityReport:
    """Difference quotients and one-sided pairings of an averaged drift.

    Parameters
    ----------
    pairs : sequence of (x1, x2)
        Coefficient arrays.
    drift : callable or sequence
        Either ``x -> (value, error)`` / ``x -> value`` or a list of
        ``(AveragedDriftEstimate, AveragedDriftEstimate)`` matching ``pairs``.
    radii : sequence, optional
        Radius label per pair for the per-radius Lipschitz envelope.

    The pairing is ``(Bbar(x2) - Bbar(x1))(xi*) * sign(h(xi*))`` at the node
    ``xi*`` maximizing ``|h| = |x2 - x1|``, and the envelope constant is the
    largest ratio of the pairing to ``1 + |h|_E + |x1|_E``.
    """
    q, pr, inc, deg, notes = [], [], [], [], []
    for i, (x1, x2) in enumerate(pairs):
        x1, x2 = np.asarray(x1, float), np.asarray(x2, float)
        if callable(drift):
            r1, r2 = drift(x1), drift(x2)
        else:
            r1, r2 = drift[i]
        v1, e1 = _value_error(r1)
        v2, e2 = _value_error(r2)
        h = x2 - x1
        hn = float(basis.sup_norm(h))
        dv = basis.to_nodal(v2 - v1)
        dn = float(np.max(np.abs(dv)))
        if hn == 0.0:
            q.append(np.nan)
            pr.append(np.nan)
            deg.append(True)
            inc.append(False)
            notes.append(f"pair {i}: identical inputs, quotient excluded")
            continue
        deg.append(False)
        flag = dn <= e1 + e2
        inc.append(flag)
        if flag:
            notes.append(f"pair {i}: difference within error bands, quotient inconclusive")
        q.append(dn / hn)
        j = int(np.argmax(np.abs(basis.to_nodal(h))))
        pr.append(float(dv[j] * np.sign(basis.to_nodal(h)[j])))
    q, pr = np.array(q), np.array(pr)
    inc, deg = np.array(inc, bool), np.array(deg, bool)
    radii = np.full(len(q), np.nan) if radii is None else np.asarray(radii, float)
    by_r = {}
    for r in np.unique(radii[~np.isnan(radii)]):
        m = (radii == r) & ~deg
        if m.any():
            by_r[float(r)] = float(np.nanmax(q[m]))
    denom = []
    for (x1, x2) in pairs:
        x1, x2 = np.asarray(x1, float), np.asarray(x2, float)
        denom.append(1 + float(basis.sup_norm(x2 - x1)) + float(basis.sup_norm(x1)))
    ok = ~deg
    pc = float(np.max(pr[ok] / np.array(denom)[ok])) if ok.any() else float("nan")
    return RegularityReport(q, pr, inc, deg, radii, by_r, pc, notes)


def _value_error(r):
    if isinstance(r, AveragedDriftEstimate):
        return r.value, r.error
    if isinstance(r, tuple):
        return np.asarray(r[0], float), float(r[1])
    return np.asarray(r, float), 0.0


def growth_envelope(estimates, basis, m1: float) -> float:
    """Smallest ``c`` with ``|Bbar(x)|_E <= c (1 + |x|_E^m1)`` over the estimates."""
    c = 0.0
    for e in estimates:
        c = max(c, float(basis.sup_norm(e.value)) / (1 + float(basis.sup_norm(e.x)) ** m1))
    return c


@dataclass
class DeviationFit:
    """``msd(T) ~ c / T + floor`` and the bias floor profile along ``T``."""

    horizons: np.ndarray
    msd: np.ndarray
    c: float
    floor: float
    r2: float
    bias2: np.ndarray
    bias_method: str

    @property
    def floor_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.bias2) < 0))


def deviation_bound_fit(xs, horizons, cfg: SlowFastConfig, reference, N_paths: int = 64,
                        s0: float = 0.0, burn_in: float | None = None,
                        coeffs: CoefficientSet | None = None) -> DeviationFit:
    """Mean-square deviation of ergodic averages from ``reference`` versus horizon.

    For each ``x`` in the compact set ``xs`` and each horizon ``T`` the
    deviation ``E |(1/T) int B1(x, v) dt - Bbar(x)|_E^2`` is estimated from
    ``N_paths`` paths (one run per ``x``, checkpointed); the supremum over
    ``xs`` is fitted linearly in ``1/T`` with non-negative coefficients.

    The bias floor ``sup_x |E (1/T) int B1 dt - Bbar(x)|_E^2`` is computed
    from noise-free paths when the fast dynamics is affine (the mean then
    solves the noise-free equation exactly) and otherwise from the ensemble
    mean with the squared standard error subtracted.
    """
    coeffs = coeffs or cfg.coeffs
    basis = cfg.basis
    horizons = np.sort(np.asarray(horizons, float))
    T = float(horizons[-1])
    if burn_in is None:
        burn_in = default_burn_in(cfg, pilot=False)
    affine = coeffs.b1_slow_poly is not None and coeffs.b2_poly_zero
    msd = np.zeros(len(horizons))
    bias2 = np.zeros(len(horizons))
    for k, x in enumerate(xs):
        x = np.asarray(x, float)
        ref = np.asarray(reference(x[None, :])[0] if callable(reference) else reference[k])
        avgs = _window_average(cfg, x, s0, T, burn_in, np.arange(N_paths) + k * N_paths, coeffs,
                               list(horizons))
        det = (_window_average(cfg, x, s0, T, burn_in, [0], coeffs, list(horizons), noise=False)
               if affine else None)
        for i, Ti in enumerate(horizons):
            a = basis.to_spectral(avgs[Ti])
            msd[i] = max(msd[i], float(np.mean(basis.sup_norm(a - ref) ** 2)))
            if affine:
                b = float(basis.sup_norm(basis.to_spectral(det[Ti][0]) - ref)) ** 2
            else:
                corr = float(np.max(a.std(axis=0, ddof=1)) ** 2 / N_paths)
                b = float(basis.sup_norm(a.mean(axis=0) - ref)) ** 2 - corr
            bias2[i] = max(bias2[i], b)
    A = np.column_stack([1.0 / horizons, np.ones_like(horizons)])
    sol = optimize.lsq_linear(A, msd, bounds=(0.0, np.inf)).x
    resid = msd - A @ sol
    r2 = 1.0 - float(np.sum(resid ** 2) / np.sum((msd - msd.mean()) ** 2))
    return DeviationFit(horizons, msd, float(sol[0]), float(sol[1]), r2, bias2,
                        "noise-free mean path" if affine else "bias-corrected ensemble mean")
