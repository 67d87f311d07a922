"""Reaction and diffusion coefficients and their composition operators.

The registry covers the families used by the configuration files::

    b1(xi, s1, s2)    = poly1(s1) + fast * s2
    b2(t, xi, s1, s2) = -damping * s2 + poly_signal(t) * poly2(s2) + coupling(t) * s1
    g1(xi, s1)        = constant + linear * s1 + sine * sin(s1)
    g2(t, xi, s2)     = signal(t) * (constant + linear * s2 + sine * sin(s2))

Arbitrary callables can be supplied programmatically through
:class:`CoefficientSet`. The linear damping of ``b2`` is kept apart so the
integrators can treat it exactly together with the elliptic part.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .signals import APSignal
from .spectral import SpectralBasis

__all__ = ["CoefficientSet", "nemytskii_apply", "check_dissipativity", "from_config"]


def _poly(coeffs):
    coeffs = np.asarray(coeffs, dtype=float)

    def p(s):
        out = np.zeros_like(s, dtype=float)
        for c in coeffs[::-1]:
            out = out * s + c
        return out
    return p


def _degree(coeffs):
    nz = np.flatnonzero(np.asarray(coeffs, dtype=float))
    return int(nz[-1]) if len(nz) else 0


@dataclass
class CoefficientSet:
    """Pointwise coefficients of the slow-fast system.

    Callables act elementwise on nodal arrays:
    ``b1(xi, s1, s2)``, ``b2_rest(t, xi, s1, s2)``, ``g1(xi, s1)``, ``g2(t, xi, s2)``.
    The full fast reaction is ``b2 = -b2_damping * s2 + b2_rest``.
    """

    b1: Callable
    b2_rest: Callable
    g1: Callable
    g2: Callable
    b2_damping: float = 0.0
    m1: float = 1.0
    m2: float = 1.0
    theta_growth: float = 0.0
    lipschitz_g2: float = 0.0
    spec: dict | None = None
    # flags used to pick fast paths and closed forms
    b1_slow_poly: tuple | None = None
    b1_fast: float | None = None
    b2_coupling: APSignal | None = None
    b2_poly_zero: bool = False
    b2_slow_free: bool = False
    g1_zero: bool = False
    g2_zero: bool = False
    g2_constant: bool = False
    g1_constant: bool = False
    truncation: float | None = None

    def b2(self, t, xi, s1, s2):
        return -self.b2_damping * s2 + self.b2_rest(t, xi, s1, s2)

    @property
    def b1_y_free(self) -> bool:
        return self.b1_fast == 0.0

    @property
    def linear_bbar_form(self) -> bool:
        """``b1`` polynomial in ``s1`` plus linear in ``s2``, ``b2`` affine in ``(s1, s2)``."""
        return self.b1_slow_poly is not None and self.b2_poly_zero and self.b2_coupling is not None

    def to_dict(self):
        if self.spec is None:
            raise ValueError("coefficients built from callables are not serializable")
        return self.spec

    def truncated(self, n: float) -> "CoefficientSet":
        """Radial clamp of the slow argument at ``|s1| = n`` in ``b1``, ``b2`` and ``g1``."""
        if not n > 0:
            raise ValueError("truncation radius must be positive")
        b1, b2r, g1 = self.b1, self.b2_rest, self.g1

        def clamp(s):
            return np.clip(s, -n, n)
        return replace(
            self,
            b1=lambda xi, s1, s2: b1(xi, clamp(s1), s2),
            b2_rest=lambda t, xi, s1, s2: b2r(t, xi, clamp(s1), s2),
            g1=lambda xi, s1: g1(xi, clamp(s1)),
            truncation=float(n),
            b1_slow_poly=None,
        )


def from_config(d: dict) -> CoefficientSet:
    """Build a :class:`CoefficientSet` from its configuration dictionary."""
    b1c = d.get("b1", {})
    b2c = d.get("b2", {})
    g1c = d.get("g1", {})
    g2c = d.get("g2", {})

    slow_poly = tuple(float(c) for c in b1c.get("slow_poly", []))
    fast = float(b1c.get("fast", 1.0))
    p1 = _poly(slow_poly)

    def b1(xi, s1, s2):
        return p1(s1) + fast * s2

    damping = float(b2c.get("damping", 0.0))
    poly2 = tuple(float(c) for c in b2c.get("poly", []))
    p2 = _poly(poly2)
    poly_signal = APSignal.from_dict(b2c.get("poly_signal", 1.0))
    coupling = APSignal.from_dict(b2c.get("coupling", 0.0))
    poly_zero = not any(poly2)

    def b2_rest(t, xi, s1, s2):
        out = coupling(t) * s1
        if not poly_zero:
            out = out + poly_signal(t) * p2(s2)
        return out

    def _g(c):
        a, b, s = float(c.get("constant", 0.0)), float(c.get("linear", 0.0)), float(c.get("sine", 0.0))

        def g(x):
            out = np.full_like(x, a, dtype=float)
            if b:
                out = out + b * x
            if s:
                out = out + s * np.sin(x)
            return out
        return g, a, b, s

    g1f, *g1p = _g(g1c)
    g2f, *g2p = _g(g2c)
    g2sig = APSignal.from_dict(g2c.get("signal", 1.0))

    def g1(xi, s1):
        return g1f(s1)

    def g2(t, xi, s2):
        return g2sig(t) * g2f(s2)

    m1 = float(max(1, _degree(slow_poly)))
    m2 = float(max(1, _degree(poly2)))
    return CoefficientSet(
        b1=b1, b2_rest=b2_rest, g1=g1, g2=g2, b2_damping=damping,
        m1=m1, m2=m2, theta_growth=float(max(0, _degree(slow_poly) - 1)),
        lipschitz_g2=g2sig.bound() * (abs(g2p[1]) + abs(g2p[2])),
        spec={"b1": b1c, "b2": b2c, "g1": g1c, "g2": g2c},
        b1_slow_poly=slow_poly, b1_fast=fast, b2_coupling=coupling,
        b2_poly_zero=poly_zero, b2_slow_free=coupling.is_constant and coupling.offset == 0.0,
        g1_zero=not any(g1p), g2_zero=not any(g2p) or g2sig.bound() == 0.0,
        g2_constant=(g2p[1] == 0.0 and g2p[2] == 0.0),
        g1_constant=(g1p[1] == 0.0 and g1p[2] == 0.0),
    )


def nemytskii_apply(coeffs: CoefficientSet, which: str, basis: SpectralBasis, x, y=None,
                    t: float = 0.0, spectral: bool = True):
    """Pointwise composition ``B(x, y)(xi) = b(xi, x(xi), y(xi))`` on the grid.

    Parameters
    ----------
    which : {"B1", "B2", "G1", "G2"}
    x, y : array_like
        Spectral coefficients (last axis = modes). ``y`` is unused for ``G1``;
        ``G2`` acts on ``y`` only.
    spectral : bool
        Project the result onto the retained modes; otherwise return nodal values.
    """
    xi = basis.grid.nodes
    xn = basis.to_nodal(x) if x is not None else None
    yn = basis.to_nodal(y) if y is not None else None
    if which == "B1":
        out = coeffs.b1(xi, xn, yn)
    elif which == "B2":
        out = coeffs.b2(t, xi, xn, yn)
    elif which == "G1":
        out = coeffs.g1(xi, xn)
    elif which == "G2":
        out = coeffs.g2(t, xi, yn)
    else:
        raise ValueError(f"unknown operator {which!r}")
    return basis.to_spectral(out) if spectral else out


def check_dissipativity(coeffs: CoefficientSet, times=None, n: int = 41, radius: float = 5.0,
                        xi=None) -> float:
    """Largest value of ``(b2(s1, s2) - b2(s1, r2)) (s2 - r2)`` on a sample grid.

    Monotone decrease in the fast variable requires this to be ``<= 0``.
    """
    times = np.linspace(0.0, 20.0, 9) if times is None else np.asarray(times)
    s = np.linspace(-radius, radius, n)
    s1, s2, r2 = np.meshgrid(s, s, s, indexing="ij")
    xi = np.asarray(0.5 if xi is None else xi)
    worst = -np.inf
    for t in times:
        d = (coeffs.b2(t, xi, s1, s2) - coeffs.b2(t, xi, s1, r2)) * (s2 - r2)
        worst = max(worst, float(d.max()))
    return worst
