"""
Almost-periodic scalar signals
==============================

Signals are finite trigonometric polynomials

.. math:: f(t) = a_0 + \\sum_j a_j \\cos(\\omega_j t + \\varphi_j),

which are dense in the class of (Bohr) almost periodic functions and keep
configuration files serializable. The module provides evaluation, Cesaro mean
values, and finite-window estimates of translation sets and inclusion lengths.

Relative density of a translation set can only be *estimated* on a finite
window; every report produced here is labelled as an estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "APSignal",
    "MeanValue",
    "TranslationScan",
    "UniformAPReport",
    "evaluate",
    "mean_value",
    "mean_value_uniform_error",
    "translation_scan",
    "uniform_ap_check",
]


@dataclass(frozen=True)
class APSignal:
    """Trigonometric polynomial ``offset + sum a cos(omega t + phase)``.

    Parameters
    ----------
    offset : float
        Constant term, which is also the mean value of the signal.
    terms : sequence of (amplitude, omega, phase)
        Oscillating components; every ``omega`` must be positive.
    period : float, optional
        Declared common period. Checked against the terms on construction.
    """

    offset: float = 0.0
    terms: tuple[tuple[float, float, float], ...] = ()
    period: float | None = None

    def __post_init__(self):
        terms = tuple((float(a), float(w), float(p)) for a, w, p in self.terms)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "offset", float(self.offset))
        for _, w, _ in terms:
            if not w > 0:
                raise ValueError(f"angular frequencies must be positive, got {w}")
        if self.period is not None:
            tau = float(self.period)
            if not tau > 0:
                raise ValueError("declared period must be positive")
            object.__setattr__(self, "period", tau)
            ts = np.linspace(0.0, 50.0, 257)
            if np.max(np.abs(self(ts + tau) - self(ts))) > 1e-12 * max(1.0, self.bound()) * 10:
                raise ValueError(f"signal is not {tau}-periodic")

    @classmethod
    def constant(cls, value: float) -> "APSignal":
        return cls(offset=value, terms=(), period=None)

    @classmethod
    def sine(cls, amplitude: float = 1.0, omega: float = 1.0, phase: float = 0.0,
             offset: float = 0.0, period: float | None = None) -> "APSignal":
        """``offset + amplitude * sin(omega t + phase)``."""
        return cls(offset=offset, terms=((amplitude, omega, phase - math.pi / 2),), period=period)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.offset)
        for a, w, p in self.terms:
            out = out + a * np.cos(w * t + p)
        return out if out.ndim else float(out)

    def __add__(self, other: "APSignal") -> "APSignal":
        return APSignal(self.offset + other.offset, self.terms + other.terms)

    def scaled(self, factor: float) -> "APSignal":
        return APSignal(factor * self.offset, tuple((factor * a, w, p) for a, w, p in self.terms),
                        self.period)

    def antiderivative(self, t):
        """Closed-form primitive vanishing at the origin up to a constant."""
        t = np.asarray(t, dtype=float)
        out = self.offset * t
        for a, w, p in self.terms:
            out = out + (a / w) * np.sin(w * t + p)
        return out if out.ndim else float(out)

    def integral(self, s, t):
        """``int_s^t f(r) dr`` in closed form."""
        return self.antiderivative(t) - self.antiderivative(s)

    def bound(self) -> float:
        return abs(self.offset) + sum(abs(a) for a, _, _ in self.terms)

    def oscillation(self) -> float:
        """Upper bound on ``sup f - inf f``."""
        return 2.0 * sum(abs(a) for a, _, _ in self.terms)

    @property
    def is_constant(self) -> bool:
        return all(a == 0.0 for a, _, _ in self.terms)

    @property
    def max_frequency(self) -> float:
        return max((w for a, w, _ in self.terms if a != 0.0), default=0.0)

    @property
    def min_frequency(self) -> float:
        return min((w for a, w, _ in self.terms if a != 0.0), default=0.0)

    def to_dict(self) -> dict:
        out = {"offset": self.offset, "terms": [list(t) for t in self.terms]}
        if self.period is not None:
            out["period"] = self.period
        return out

    @classmethod
    def from_dict(cls, d) -> "APSignal":
        if isinstance(d, (int, float)):
            return cls.constant(float(d))
        return cls(offset=d.get("offset", 0.0), terms=tuple(tuple(t) for t in d.get("terms", ())),
                   period=d.get("period"))


def evaluate(signal: APSignal, t):
    return signal(t)


@dataclass
class MeanValue:
    value: np.ndarray | float
    error: float
    T: float
    t0: float


def mean_value(f, T: float, t0: float = 0.0, times=None) -> MeanValue:
    """Cesaro average ``(1/T) int_{t0}^{t0+T} f(s) ds``.

    Parameters
    ----------
    f : APSignal or array_like
        Either a signal (closed form) or samples on the uniform grid ``times``.
        Samples may be vector valued; the first axis is time.
    T : float
        Averaging window.
    t0 : float
        Window start.
    times : array_like, optional
        Sample times, required for sampled paths.

    Returns
    -------
    MeanValue
        For a signal, ``error`` is the closed-form bound on the boundary term,
        ``sum 2|a_j| / (omega_j T)``. For samples it is ``|M(T) - M(T/2)|``
        (sup over components).
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if isinstance(f, APSignal):
        value = f.integral(t0, t0 + T) / T
        err = sum(2.0 * abs(a) / (w * T) for a, w, _ in f.terms)
        return MeanValue(value, err, T, t0)

    if times is None:
        raise ValueError("sampled paths need their sample times")
    times = np.asarray(times, dtype=float)
    vals = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite samples")
    full = _window_mean(times, vals, t0, T)
    half = _window_mean(times, vals, t0, T / 2)
    return MeanValue(full, float(np.max(np.abs(full - half))), T, t0)


def _window_mean(times, vals, t0, T):
    dt = times[1] - times[0]
    i0 = int(round((t0 - times[0]) / dt))
    n = int(round(T / dt))
    if i0 < 0 or i0 + n > len(times) - 1:
        raise ValueError("averaging window exceeds the sampled range")
    seg = vals[i0:i0 + n + 1]
    return np.trapezoid(seg, dx=dt, axis=0) / (n * dt)


def mean_value_uniform_error(signal: APSignal, T: float, dt: float | None = None,
                             n_offsets: int = 64) -> float:
    """Worst-case error of sampled-path mean values over windows of length [T, 2T].

    The signal is sampled on a fine grid and integrated by the trapezoidal rule
    (independently of the closed form); the error against the exact mean value
    ``offset`` is maximized over start points ``t0`` spanning the slowest period
    and over window lengths ``T' in [T, 2T]``.
    """
    wmax = max(signal.max_frequency, 1.0)
    wmin = signal.min_frequency or 1.0
    dt = dt or min(0.01, 0.05 / wmax)
    span0 = 2 * math.pi / wmin
    t = np.arange(0.0, span0 + 2 * T + 2 * dt, dt)
    vals = signal(t)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * dt)])
    starts = np.linspace(0, int(span0 / dt), n_offsets).astype(int)
    lens = np.arange(int(round(T / dt)), int(round(2 * T / dt)) + 1)
    worst = 0.0
    for i0 in starts:
        m = (cum[i0 + lens] - cum[i0]) / (lens * dt)
        worst = max(worst, float(np.max(np.abs(m - signal.offset))))
    return worst


@dataclass
class TranslationScan:
    """Finite-window estimate of an epsilon-translation set.

    ``inclusion_length`` is the largest gap between consecutive almost-periods
    found in ``[0, window]``; it is ``None`` (inconclusive) when nothing beyond
    ``tau = 0`` was found.
    """

    eps: float
    window: float
    step: float
    periods: np.ndarray
    discrepancy: np.ndarray
    inclusion_length: float | None
    certified: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    @property
    def inconclusive(self) -> bool:
        return self.inclusion_length is None


def _candidate_grid(window, step, extra=()):
    taus = np.arange(0.0, window + 0.5 * step, step)
    taus = taus[taus <= window + 1e-12]
    if len(extra):
        taus = np.union1d(taus, np.asarray(extra, dtype=float))
    return taus


def _sup_discrepancy(signal, taus, t):
    out = np.empty(len(taus))
    base = signal(t)
    for i in range(0, len(taus), 64):
        blk = taus[i:i + 64]
        shifted = signal(t[None, :] + blk[:, None])
        out[i:i + 64] = np.max(np.abs(shifted - base[None, :]), axis=1)
    return out


def _rigorous_bound(signal, taus):
    b = np.zeros(len(taus))
    for a, w, _ in signal.terms:
        b += 2.0 * abs(a) * np.abs(np.sin(0.5 * w * taus))
    return b


def _scan_times(signal, window, step, t_range):
    if t_range is None:
        wmin = signal.min_frequency or 1.0
        t_range = max(window, 8 * math.pi / wmin)
    wmax = signal.max_frequency or 1.0
    dt = min(step / 2, math.pi / (8 * wmax))
    return np.arange(0.0, t_range + dt, dt)


def translation_scan(signal: APSignal, eps: float, window: float, step: float | None = None,
                     t_range: float | None = None) -> TranslationScan:
    """Grid search for epsilon-almost periods in ``[0, window]``.

    ``tau`` qualifies when ``sup_t |f(t + tau) - f(t)| < eps`` over a sampled
    ``t`` range. Multiples of a declared period are always added to the grid.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    wmax = signal.max_frequency
    limit = math.pi / (4 * wmax) if wmax > 0 else window
    step = step if step is not None else limit
    if step > limit * (1 + 1e-12):
        raise ValueError(f"step {step} does not resolve the fastest frequency (need <= {limit})")
    extra = ()
    if signal.period is not None:
        extra = signal.period * np.arange(1, int(window / signal.period) + 1)
    taus = _candidate_grid(window, step, extra)
    t = _scan_times(signal, window, step, t_range)
    disc = _sup_discrepancy(signal, taus, t)
    ok = disc < eps
    found = taus[ok]
    return TranslationScan(eps, window, step, found, disc[ok], _inclusion_length(found, step),
                           _rigorous_bound(signal, found) < eps)


def _inclusion_length(found, step):
    if len(found) < 2:
        return None
    gaps = np.diff(found)
    return float(max(gaps.max(), step))


@dataclass
class UniformAPReport:
    eps: float
    common_periods: np.ndarray
    inclusion_length: float | None
    per_signal: list[TranslationScan]
    note: str = ("tau = 0 plus the scan step stands in for the interval around 0 "
                 "required of uniform translation sets")

    @property
    def inconclusive(self) -> bool:
        return self.inclusion_length is None


def uniform_ap_check(family: Sequence[APSignal], eps: float, window: float,
                     step: float | None = None) -> UniformAPReport:
    """Intersect the translation sets of a finite family on a common grid."""
    family = list(family)
    if not family:
        raise ValueError("empty family")
    wmax = max(s.max_frequency for s in family)
    if step is None:
        step = math.pi / (4 * wmax) if wmax > 0 else window
    scans = [translation_scan(s, eps, window, step) for s in family]
    common = scans[0].periods
    for sc in scans[1:]:
        hit = np.abs(common[:, None] - sc.periods[None, :]) < 1e-9 * max(1.0, window)
        common = common[hit.any(axis=1)]
    return UniformAPReport(eps, common, _inclusion_length(common, step), scans)
