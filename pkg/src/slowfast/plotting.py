"""Optional PNG figures written next to the CSV/JSON-lines outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_trajectory(record, basis, path, which: str = "slow"):
    """Sup norm and leading modes of the first ensemble member."""
    data = record.slow if which == "slow" else record.fast
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.plot(record.times, basis.sup_norm(data[:, 0]), color="k")
    a.set_xlabel("t")
    a.set_ylabel(f"|{which}|_E")
    for k in range(min(4, data.shape[-1])):
        b.plot(record.times, data[:, 0, k], label=f"mode {k}")
    b.set_xlabel("t")
    b.legend(fontsize=8)
    return _save(fig, path)


def plot_sweep(result, path):
    """Exceedance proportions with Wilson intervals against eps."""
    eps = np.array([c.eps for c in result.cells])
    p = result.proportions
    lo = np.array([c.interval[0] for c in result.cells])
    hi = np.array([c.interval[1] for c in result.cells])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(eps, p, yerr=[p - lo, hi - p], fmt="o-", capsize=3)
    ax.set_xscale("log")
    ax.invert_xaxis()
    ax.set_xlabel("eps")
    ax.set_ylabel("P(sup gap > eta)")
    ax.set_ylim(-0.05, 1.05)
    return _save(fig, path)


def plot_measure(measure, path, modes=(0, 1)):
    """Histograms of selected mode coefficients of an ensemble."""
    fig, axes = plt.subplots(1, len(modes), figsize=(4 * len(modes), 3.2))
    for ax, k in zip(np.atleast_1d(axes), modes):
        ax.hist(measure.members[:, k], bins=40, density=True, color="0.6")
        ax.set_xlabel(f"mode {k}")
    return _save(fig, path)


def plot_bbar(estimates, reference, path):
    """Estimated versus reference averaged-drift coefficients."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for e in estimates:
        ax.plot(e.value, "o", label=f"{e.method} T={e.horizon:g}")
    if reference is not None:
        ax.plot(reference, "k_", markersize=14, label="closed form")
    ax.set_xlabel("mode")
    ax.legend(fontsize=8)
    return _save(fig, path)
