"""
Q-Wiener increments from a counter-based generator
===================================================

Every Gaussian is a pure function of ``(seed, channel, stream, branch, step,
mode)``: the counter is fed through Philox-4x32-10 and the four 32-bit words
are turned into four standard normals by Box-Muller. No generator state is
carried between calls, so trajectories are bitwise reproducible whatever the
evaluation order, batching or worker count.

Counter layout (4 x 32 bits)::

    c0 = mode block (4 modes per block)
    c1 = step, low 32 bits
    c2 = stream id
    c3 = branch << 31 | channel << 24 | step, high 24 bits

The key is the 64-bit master seed. The branch bit separates the two
independent Wiener processes glued together at ``t = 0`` for pullback runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral import SpectralModel, TimeDependentOperator, evolution_multiplier

__all__ = [
    "SLOW",
    "FAST",
    "NoiseSpec",
    "WienerIncrementBlock",
    "StreamSelector",
    "philox4x32",
    "standard_normals",
    "sample_increments",
    "two_sided_stream",
    "global_step",
    "stochastic_convolution",
]

SLOW = 0
FAST = 1

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_TWO_PI = 2.0 * math.pi
_INV32 = 1.0 / 4294967296.0


def philox4x32(counter, key, rounds: int = 10):
    """Philox-4x32 block function on broadcastable uint32 words (held as uint64)."""
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) for k in key)
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (p1 >> _S32) ^ c1 ^ k0, p1 & _MASK, (p0 >> _S32) ^ c3 ^ k1, p0 & _MASK
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


def standard_normals(seed: int, channel: int, streams, step: int, n_modes: int,
                     branch: int = 0) -> np.ndarray:
    """Standard normals of shape ``(len(streams), n_modes)`` for one time step."""
    if step < 0 or step >= 1 << 56:
        raise ValueError("step index out of range")
    streams = np.atleast_1d(np.asarray(streams))
    if streams.size and (streams.min() < 0 or streams.max() >= 1 << 32):
        raise ValueError("stream ids must fit in 32 bits")
    streams = streams.astype(np.uint64)
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    key = (np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32))
    n_blocks = (n_modes + 3) // 4
    blocks = np.arange(n_blocks, dtype=np.uint64)[None, :]
    hi = (int(branch) << 31) | ((int(channel) & 0x7F) << 24) | (step >> 32)
    w = philox4x32((blocks, np.uint64(step & 0xFFFFFFFF), streams[:, None], np.uint64(hi)), key)
    u = [(wi.astype(np.float64) + 0.5) * _INV32 for wi in w]
    r0 = np.sqrt(-2.0 * np.log(u[0]))
    r1 = np.sqrt(-2.0 * np.log(u[2]))
    z = np.stack([r0 * np.cos(_TWO_PI * u[1]), r0 * np.sin(_TWO_PI * u[1]),
                  r1 * np.cos(_TWO_PI * u[3]), r1 * np.sin(_TWO_PI * u[3])], axis=-1)
    return z.reshape(len(streams), 4 * n_blocks)[:, :n_modes]


@dataclass(frozen=True)
class NoiseSpec:
    """Q-Wiener process ``w(t) = sum_k lambda_k e_k beta_k(t)`` for one stream."""

    model: SpectralModel
    seed: int
    stream: int = 0
    channel: int = FAST

    def __post_init__(self):
        if not 0 <= int(self.seed) < 1 << 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class WienerIncrementBlock:
    dt: float
    increments: np.ndarray  # lambda_k * sqrt(dt) * z_k


@dataclass(frozen=True)
class StreamSelector:
    stream: int
    branch: int
    step: int


def global_step(t: float, dt: float) -> int:
    """Index ``n`` of the grid cell ``[n dt, (n + 1) dt)`` starting at ``t``."""
    n = t / dt
    k = int(round(n))
    if abs(n - k) > 1e-6:
        raise ValueError(f"time {t} is not on the {dt} grid")
    return k


def two_sided_stream(spec: NoiseSpec, t: float, dt: float) -> StreamSelector:
    """Route the cell starting at ``t``: branch 0 for ``t >= 0``, branch 1 (time-reversed) below."""
    n = global_step(t, dt)
    if n >= 0:
        return StreamSelector(spec.stream, 0, n)
    return StreamSelector(spec.stream, 1, -n - 1)


def two_sided_normals(seed, channel, streams, n, n_modes):
    """Normals for the global cell ``n`` (may be negative)."""
    if n >= 0:
        return standard_normals(seed, channel, streams, n, n_modes, 0)
    return standard_normals(seed, channel, streams, -n - 1, n_modes, 1)


def sample_increments(spec: NoiseSpec, step: int, dt: float, branch: int = 0) -> WienerIncrementBlock:
    """Per-mode increments ``lambda_k sqrt(dt) z_k`` keyed by ``(seed, stream, step, mode)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = standard_normals(spec.seed, spec.channel, [spec.stream], step,
                         spec.model.basis.n_modes, branch)[0]
    return WienerIncrementBlock(dt, spec.model.noise * math.sqrt(dt) * z)


def path_increments(spec: NoiseSpec, s: float, t: float, dt: float, streams=None) -> np.ndarray:
    """Increments over the cells of ``[s, t]``, shape ``(n_steps, n_streams, K)``."""
    n0, n1 = global_step(s, dt), global_step(t, dt)
    streams = [spec.stream] if streams is None else streams
    K = spec.model.basis.n_modes
    scale = spec.model.noise * math.sqrt(dt)
    return np.stack([scale * two_sided_normals(spec.seed, spec.channel, streams, n, K)
                     for n in range(n0, n1)])


def stochastic_convolution(op: TimeDependentOperator, coeffs, times, path, increments,
                           s: float, t: float, shift: float = 0.0, eps: float = 1.0) -> np.ndarray:
    """Left-point Ito sum for ``int_s^t U_{shift,eps}(t, r) G2(r, v(r)) dw(r)``.

    Parameters
    ----------
    coeffs : CoefficientSet
        Supplies ``g2``.
    times : array_like
        Left endpoints ``r_i`` of the increment cells (uniform, starting at ``s``).
    path : array_like
        Coefficients of ``v(r_i)``, shape ``(n, ..., K)``.
    increments : array_like
        Per-mode Wiener increments on the same cells, shape ``(n, ..., K)``.

    The product ``G2(r, v) dw`` is formed on the collocation grid and projected
    onto the retained modes before the per-mode evolution multiplier is applied.
    """
    times = np.asarray(times, dtype=float)
    path = np.asarray(path, dtype=float)
    increments = np.asarray(increments, dtype=float)
    if len(times) != len(increments) or len(path) != len(increments):
        raise ValueError("path, times and increments must share the increment grid")
    if len(times) and abs(times[0] - s) > 1e-12:
        raise ValueError("increment grid must start at s")
    basis = op.model.basis
    xi = basis.grid.nodes
    acc = np.zeros(increments.shape[1:])
    for r, v, dw in zip(times, path, increments):
        prod = coeffs.g2(r, xi, basis.to_nodal(v)) * basis.to_nodal(dw)
        acc += evolution_multiplier(op, r, t, shift, eps) * basis.to_spectral(prod)
    return acc
