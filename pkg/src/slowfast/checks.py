"""Fast invariant suite behind the ``check`` subcommand."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import check_dissipativity
from .integrators import integrate_coupled
from .noise import FAST, philox4x32, standard_normals
from .spectral import evolution_multiplier, semigroup_apply


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _orthonormality(setup):
    err = float(np.max(np.abs(setup.basis.gram() - np.eye(setup.basis.n_modes))))
    return CheckResult("orthonormality", err < 1e-10, f"max |G - I| = {err:.2e}")


def _semigroup(setup):
    rng = np.random.default_rng(1)
    c = rng.standard_normal(setup.basis.n_modes)
    a = semigroup_apply(setup.slow, semigroup_apply(setup.slow, c, 0.3, 0.5), 0.4, 0.5)
    b = semigroup_apply(setup.slow, c, 0.7, 0.5)
    err = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
    return CheckResult("semigroup law", err < 1e-12, f"max diff {err:.2e}")


def _factorization(setup):
    op = setup.fast
    full = evolution_multiplier(op, 0.2, 1.7, 0.5, 0.3)
    split = evolution_multiplier(op, 1.1, 1.7, 0.5, 0.3) * evolution_multiplier(op, 0.2, 1.1, 0.5, 0.3)
    err = float(np.max(np.abs(full - split)))
    return CheckResult("evolution factorization", err < 1e-12, f"max diff {err:.2e}")


def _dissipativity(setup):
    worst = check_dissipativity(setup.coeffs)
    return CheckResult("b2 monotone in fast variable", worst <= 1e-9, f"max product {worst:.3g}")


def _h1(setup):
    r = []
    for m in (setup.slow, setup.fast.model):
        ratio = m.beta if math.isinf(m.rho) else m.beta * (m.rho - 2) / m.rho
        r.append(ratio)
    return CheckResult("summability exponents", max(r) < 1, f"beta(rho-2)/rho = {max(r):.3g}")


def _philox(setup):
    w = philox4x32((0, 0, 0, 0), (0, 0))
    got = [int(v) for v in w]
    ok = got == [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]
    return CheckResult("Philox known answer", ok, " ".join(f"{v:08x}" for v in got))


def _determinism(setup):
    a = standard_normals(setup.base.seed, FAST, [3, 7], 11, setup.basis.n_modes)
    b = standard_normals(setup.base.seed, FAST, [7], 11, setup.basis.n_modes)
    return CheckResult("order-independent noise", a[1].tobytes() == b[0].tobytes(),
                       "stream 7 identical alone and batched")


def _reproducible(setup):
    cfg = setup.sim(horizon=min(0.05, setup.base.horizon))
    r1 = integrate_coupled(cfg, [0, 1, 2, 3])
    r2 = integrate_coupled(cfg, [2, 3])
    ok = r1.slow[:, 2:].tobytes() == r2.slow.tobytes()
    return CheckResult("batch-independent trajectories", ok, "members 2,3 bitwise equal")


CHECKS = [_orthonormality, _semigroup, _factorization, _h1, _dissipativity, _philox,
          _determinism, _reproducible]


def run_checks(setup) -> list[CheckResult]:
    return [c(setup) for c in CHECKS]
