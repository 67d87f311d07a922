"""Averaging experiments on the coupled system.

Everything here runs ensembles of the coupled slow-fast system and compares
them against the frozen-window auxiliary process or the averaged equation.
Sweeps are split into fixed-size chunks of trials; a chunk is the unit of
work handed to a worker, so results do not depend on the worker count.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .averaging import HMMDrift, closed_form_bbar, default_truncation_radius
from .config import build, config_hash
from .integrators import (BlowUpError, FastStepper, SlowFastConfig, integrate_averaged,
                          integrate_coupled)
from .noise import FAST, SLOW, standard_normals
from .records import RunRecord

__all__ = [
    "khasminskii_schedule",
    "DeviationSeries",
    "auxiliary_deviation",
    "RemainderResult",
    "remainder_series",
    "weak_form_residual",
    "EpsCell",
    "SweepResult",
    "convergence_experiment",
    "drift_oracle",
    "pilot_eta",
    "wilson_interval",
]

logger = logging.getLogger(__name__)

INDEPENDENT_OFFSET = 1 << 26


def khasminskii_schedule(eps: float, kappa: float = 1.0, horizon: float | None = None) -> float:
    """Window length ``delta = eps * kappa * log(1 / eps)``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    delta = eps * kappa * math.log(1.0 / eps)
    if horizon is not None and not delta < horizon:
        raise ValueError(f"window {delta:.4g} does not fit in the horizon {horizon}")
    return delta


@dataclass
class DeviationSeries:
    """Mean-square sup-norm distance between the fast motion and its frozen-window copy."""

    times: np.ndarray
    msd: np.ndarray
    se: np.ndarray
    delta: float
    radius: float

    @property
    def sup(self) -> float:
        return float(np.max(self.msd))

    @property
    def sup_se(self) -> float:
        return float(self.se[int(np.argmax(self.msd))])


def auxiliary_deviation(cfg: SlowFastConfig, delta: float | None = None, kappa: float = 1.0,
                        n: float | None = None, streams=None) -> DeviationSeries:
    """Co-simulate the coupled system and the auxiliary fast motion on shared noise.

    On each window ``[k delta, (k + 1) delta)`` the auxiliary process restarts
    from the current fast state and evolves with the slow field frozen at its
    value at the window start. Both use coefficients truncated at radius
    ``n`` (default :func:`default_truncation_radius`). Returns the ensemble
    mean of ``|v_hat - v|_E^2`` at every macro time.
    """
    streams = np.arange(32) if streams is None else np.atleast_1d(streams)
    if delta is None:
        delta = khasminskii_schedule(cfg.eps, kappa, cfg.horizon)
    n = default_truncation_radius(cfg) if n is None else n
    coeffs = cfg.coeffs.truncated(n)
    basis = cfg.basis
    K = basis.n_modes
    m = cfg.micro_steps
    hf = cfg.dt_fast
    stepper = FastStepper(cfg, hf / cfg.eps, coeffs)
    noisy = not coeffs.g2_zero
    state = {"k": 0, "vh": None, "xn": None}
    times, msd, se = [], [], []

    def hook(nf, tf, u, un, v, vn):
        if tf >= state["k"] * delta - 1e-12:
            state["vh"] = v.copy()
            state["xn"] = un.copy()
            state["k"] += 1
        vh = state["vh"]
        vhn = basis.to_nodal(vh)
        if nf % m == 0:
            d = np.max(np.abs(vhn - vn), axis=-1) ** 2
            times.append(tf)
            msd.append(d.mean())
            se.append(d.std(ddof=1) / math.sqrt(len(d)) if len(d) > 1 else 0.0)
        z = standard_normals(cfg.seed, FAST, streams, nf, K) if noisy else None
        state["vh"] = stepper.step(tf / cfg.eps, vh, vhn, state["xn"], z)

    integrate_coupled(cfg, streams, record_every=cfg.n_macro, coeffs=coeffs, fast_hook=hook)
    return DeviationSeries(np.array(times), np.array(msd), np.array(se), float(delta), float(n))


@dataclass
class RemainderResult:
    times: np.ndarray
    paths: np.ndarray  # (n_times, N)

    @property
    def sup(self) -> np.ndarray:
        return np.max(np.abs(self.paths), axis=0)

    @property
    def mean_sup(self) -> float:
        return float(self.sup.mean())

    @property
    def se_sup(self) -> float:
        s = self.sup
        return float(s.std(ddof=1) / math.sqrt(len(s))) if len(s) > 1 else 0.0


def remainder_series(cfg: SlowFastConfig, drift, probe, streams=None) -> RemainderResult:
    """``R(t) = int_0^t <B1(u, v) - Bbar(u), h> ds`` along coupled trajectories.

    The integrand at each macro step uses the sub-step average of ``B1`` that
    drives the slow update, so ``R`` is exactly the accumulated drift
    discrepancy seen by the slow component.
    """
    streams = np.arange(32) if streams is None else np.atleast_1d(streams)
    h = np.asarray(probe, float)
    R = np.zeros(len(streams))
    times, paths = [0.0], [R.copy()]

    def hook(n, t, u, b1_mean):
        R[:] += cfg.dt_macro * ((b1_mean - drift(u)) @ h)
        times.append(t + cfg.dt_macro)
        paths.append(R.copy())

    integrate_coupled(cfg, streams, record_every=cfg.n_macro, macro_hook=hook)
    return RemainderResult(np.array(times), np.array(paths))


def weak_form_residual(cfg: SlowFastConfig, probe, streams=None) -> float:
    """Largest violation of the weak form of the slow equation on a stored path.

    Checks ``<u(t), h> - <x, h> = int_0^t <u, A1 h> + <B1(u, v), h> ds + <int G1 dw, h>``
    with left-point sums over the macro grid; the residual is ``O(dt_macro)``.
    """
    streams = np.arange(4) if streams is None else np.atleast_1d(streams)
    h = np.asarray(probe, float)
    Ah = -cfg.slow.alphas * h
    basis = cfg.basis
    K = basis.n_modes
    lam_nodal = basis.funcs * cfg.slow.noise[None, :]
    acc = np.zeros(len(streams))
    rhs = [acc.copy()]

    def hook(n, t, u, b1_mean):
        un = basis.to_nodal(u)
        inc = cfg.dt_macro * (u @ Ah + b1_mean @ h)
        if not cfg.coeffs.g1_zero:
            z = standard_normals(cfg.seed, SLOW, streams, n, K)
            w = math.sqrt(cfg.dt_macro) * (z @ lam_nodal.T)
            inc = inc + basis.to_spectral(cfg.coeffs.g1(basis.grid.nodes, un) * w) @ h
        acc[:] += inc
        rhs.append(acc.copy())

    rec = integrate_coupled(cfg, streams, record_every=1, macro_hook=hook)
    lhs = rec.slow @ h - cfg.x0 @ h
    return float(np.max(np.abs(lhs - np.array(rhs))))


def wilson_interval(k: int, n: int, level: float = 0.95):
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class EpsCell:
    eps: float
    gaps: np.ndarray
    blown: np.ndarray
    eta: float

    @property
    def exceed(self) -> np.ndarray:
        return self.blown | (self.gaps > self.eta)

    @property
    def proportion(self) -> float:
        return float(self.exceed.mean())

    @property
    def interval(self):
        return wilson_interval(int(self.exceed.sum()), len(self.gaps))

    def quantiles(self, qs=(0.1, 0.5, 0.9)):
        g = np.where(self.blown, np.inf, self.gaps)
        # interpolating through inf gives nan; step quantiles keep blown trials at inf
        method = "higher" if self.blown.any() else "linear"
        return {str(q): float(np.quantile(g, q, method=method)) for q in qs}

    def summary(self) -> dict:
        lo, hi = self.interval
        return {"eps": self.eps, "trials": int(len(self.gaps)), "exceed": int(self.exceed.sum()),
                "proportion": self.proportion, "wilson_low": lo, "wilson_high": hi,
                "blown": int(self.blown.sum()), "eta": self.eta,
                "gap_quantiles": self.quantiles()}


@dataclass
class SweepResult:
    cells: list
    eta: float
    record: RunRecord | None = None

    @property
    def proportions(self) -> np.ndarray:
        return np.array([c.proportion for c in self.cells])

    def nonincreasing(self) -> bool:
        """No significant increase between consecutive cells (Wilson intervals overlap or decrease)."""
        for a, b in zip(self.cells, self.cells[1:]):
            if b.interval[0] > a.interval[1]:
                return False
        return True


def drift_oracle(setup, cfg: SlowFastConfig | None = None):
    """Averaged-drift callable selected by ``experiment.drift_oracle``."""
    cfg = cfg or setup.base
    ex = setup.config["experiment"]
    if ex.get("drift_oracle", "closed_form") == "closed_form":
        return closed_form_bbar(cfg)
    return HMMDrift(cfg, n_micro=ex.get("hmm_paths", 64), t_micro=ex.get("hmm_horizon"),
                    cache=ex.get("hmm_cache", False))


def pilot_eta(setup, factor: float | None = None, n: int = 8) -> float:
    """``factor`` times the mean sup-norm size of the averaged solution over a pilot ensemble."""
    ex = setup.config["experiment"]
    factor = ex.get("eta_factor", 0.2) if factor is None else factor
    cfg = setup.base
    rec = integrate_averaged(cfg, drift_oracle(setup, cfg), streams=np.arange(n))
    return float(factor * np.mean(np.max(rec.slow_norm, axis=0)))


def _gaps(cfg, drift, streams, avg_streams, record_every):
    coupled = integrate_coupled(cfg, streams, record_every=record_every)
    averaged = integrate_averaged(cfg, drift, avg_streams, record_every=record_every)
    diff = coupled.slow - averaged.slow
    return np.max(cfg.basis.sup_norm(diff), axis=0)


def _run_chunk(job):
    config, eps, start, stop, independent = job
    setup = build(config, check_dissipativity=False)
    cfg = setup.sim(eps)
    drift = drift_oracle(setup, cfg)
    streams = np.arange(start, stop)
    avg_streams = streams + (INDEPENDENT_OFFSET if independent else 0)
    blown = np.zeros(len(streams), bool)
    try:
        gaps = _gaps(cfg, drift, streams, avg_streams, 1)
    except BlowUpError:
        gaps = np.zeros(len(streams))
        for i, s in enumerate(streams):
            try:
                gaps[i] = _gaps(cfg, drift, [s], [avg_streams[i]], 1)[0]
            except BlowUpError as exc:
                logger.warning("trial %d blew up at eps=%g: %s", s, eps, exc)
                gaps[i] = np.inf
                blown[i] = True
    return gaps, blown


def _write_partial(out, jobs, results):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "partial.jsonl", "w") as fh:
        for (_, eps, a, b, _), (gaps, blown) in zip(jobs, results):
            fh.write(json.dumps({"eps": eps, "trials": [a, b], "gaps": [repr(float(g)) for g in gaps],
                                 "blown": blown.tolist()}) + "\n")
    logger.warning("sweep aborted after %d of %d chunks; partial results in %s",
                   len(results), len(jobs), out / "partial.jsonl")


def convergence_experiment(config: dict, eps_list=None, trials: int | None = None,
                           eta: float | None = None, workers: int = 1,
                           partial_dir=None) -> SweepResult:
    """Exceedance of ``sup_t |u_eps - u_bar|_E > eta`` across the eps grid.

    Coupled and averaged runs share the slow noise streams (trial ``i`` uses
    stream ``i`` for every eps) unless ``experiment.coupling`` is
    ``"independent"``. Trials are split into chunks of
    ``experiment.chunk_size`` and may run on ``workers`` processes; the chunk
    layout and reduction order do not depend on ``workers``. If the run is
    aborted and ``partial_dir`` is given, the finished chunks are written to
    ``partial_dir/partial.jsonl`` before the exception propagates.
    """
    t0 = time.perf_counter()
    setup = build(config)
    full = setup.config
    ex = full["experiment"]
    eps_list = list(ex["eps"] if eps_list is None else eps_list)
    trials = int(ex["trials"] if trials is None else trials)
    if eta is None:
        eta = ex.get("eta") or pilot_eta(setup)
    chunk = int(ex.get("chunk_size", 16))
    independent = ex.get("coupling", "common") == "independent"
    jobs = [(full, float(e), a, min(a + chunk, trials), independent)
            for e in eps_list for a in range(0, trials, chunk)]
    results = []
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for r in pool.map(_run_chunk, jobs):
                    results.append(r)
        else:
            for j in jobs:
                results.append(_run_chunk(j))
    except BaseException:
        if partial_dir is not None:
            _write_partial(partial_dir, jobs, results)
        raise
    cells, it = [], iter(results)
    for e in eps_list:
        parts = [next(it) for _ in range(0, trials, chunk)]
        cells.append(EpsCell(float(e), np.concatenate([p[0] for p in parts]),
                             np.concatenate([p[1] for p in parts]), float(eta)))
    res = SweepResult(cells, float(eta))
    seeds = {"master": int(full["seed"]), "slow_streams": [0, trials],
             "averaged_stream_offset": INDEPENDENT_OFFSET if independent else 0,
             "fast_channel": FAST, "slow_channel": SLOW}
    res.record = RunRecord(
        config=full, config_hash=config_hash(full), seeds=seeds,
        series={"gaps": np.array([c.gaps for c in cells]),
                "exceed": np.array([c.exceed.astype(float) for c in cells]),
                "eps": np.array(eps_list, dtype=float)},
        summary=[c.summary() for c in cells],
        diagnostics={"nonincreasing": res.nonincreasing(), "eta": float(eta),
                     "chunk_size": chunk, "version": __version__},
        wall_clock=time.perf_counter() - t0)
    return res
