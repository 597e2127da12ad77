"""Empirical checks of the Gaussian concentration bounds behind the majorant.

All three checks work on pure-noise pair tables ``D[b, mu, nu] =
|xi_{mu,nu} - xi_nu|`` at unit noise level:

* Borell-TIS: ``P(sup_nu D - E sup_nu D > u) <= 2 exp(-u^2 / 2 s_T^2)`` at
  ``u in {1, 2, 3} s_T`` with ``s_T^2 = max_nu Var(xi_{mu,nu} - xi_nu)``.
* Moment bound: ``(E sup_{nu: s~_nu <= s~_mu} D^r)^{1/r} <= C_r (e(s~_mu) + 2 s~_mu)``.
* Tail bound: ``P(sup_{nu: s~_nu >= s~_mu} [D - Q(s~_nu) / 2] > t)
  <= 4 (s_min / s~_mu)^{k1 / 64} exp(-t^2 / 16 s~_mu^2)`` at ``t in {0, 1, 2} s~_mu``.

Each empirical probability or moment is allowed ``n_se`` Monte Carlo standard
errors of slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .kernels import ThetaGrid, make_base_kernel, theta_single_index
from .linear_est import PairEngine
from .majorant import build_majorant, default_grid, e_mc, lemma_a1_constant, noise_sup_samples

__all__ = ["BoundCheck", "ConcentrationReport", "default_theta", "concentration_suite"]


@dataclass(frozen=True)
class BoundCheck:
    """One probe: empirical value, bound and allowed MC slack."""

    name: str
    mu: int
    probe: float
    empirical: float
    bound: float
    se: float
    slack: float = 0.0

    @property
    def ok(self) -> bool:
        return self.empirical <= self.bound + self.slack


@dataclass(frozen=True)
class ConcentrationReport:
    checks: tuple[BoundCheck, ...]
    reps: int
    seed: int
    meta: dict = field(default_factory=dict)

    def by_name(self, name: str) -> list[BoundCheck]:
        return [c for c in self.checks if c.name == name]

    def ok(self, name: str | None = None) -> bool:
        sel = self.checks if name is None else self.by_name(name)
        return all(c.ok for c in sel)

    def worst_margin(self, name: str) -> float:
        """Largest ``empirical - bound`` in units of the allowed slack (<= 1 passes)."""
        return max((c.empirical - c.bound) / max(c.slack, 1e-300) for c in self.by_name(name))


def default_theta(d: int = 2) -> ThetaGrid:
    """Small rotated family used by the suite (12 members at ``d = 2``)."""
    base = make_base_kernel("quartic", d, 0)
    return theta_single_index(base, 0.08, 0.2, n_angles=4 if d == 2 else 1, n_h=3)


def _prob_check(name, mu, probe, hits: NDArray, bound, n_se) -> BoundCheck:
    n = hits.size
    p = float(np.mean(hits))
    # binomial s.e., floored at the one-event resolution so p = 0 is not free
    se = max(math.sqrt(max(p * (1 - p), 0.0) / n), 1.0 / n)
    return BoundCheck(name, mu, probe, p, float(bound), se, n_se * se)


def concentration_suite(
    theta: ThetaGrid | None = None,
    reps: int = 2000,
    seed: int = 0,
    r: float = 2.0,
    n_se: float = 4.0,
    e_reps: int = 400,
) -> ConcentrationReport:
    """Run the three concentration checks for every ``mu`` of ``theta``."""
    theta = default_theta() if theta is None else theta
    engine = PairEngine(theta, default_grid(theta))
    _, D = noise_sup_samples(theta, reps, seed, engine=engine, keep_tables=True)
    # an independent table for e(sigma) so the bounds do not reuse the samples they test
    table = e_mc(theta, reps=e_reps, seed=seed + 1, engine=engine)
    spec = build_majorant("GENERAL-21", theta, table, r=r)
    var = engine.variance_table()
    st = theta.sigma_tilde
    smin = theta.sigma_min
    C_r = lemma_a1_constant(r)
    Q_nu = np.asarray(spec.Q(st))
    checks: list[BoundCheck] = []
    for m in range(len(theta)):
        # Borell-TIS on the whole process indexed by nu
        sup = D[:, m, :].max(axis=1)
        mean = float(sup.mean())
        s_T = math.sqrt(float(np.max(var[m])))
        for k in (1.0, 2.0, 3.0):
            u = k * s_T
            checks.append(_prob_check("borell-tis", m, k, sup > mean + u, 2.0 * math.exp(-u * u / (2 * s_T * s_T)), n_se))

        # moment bound over the coarser-variance members
        low = st <= st[m] * (1 + 1e-12)
        vals = D[:, m, low].max(axis=1) ** r
        mom = float(vals.mean()) ** (1.0 / r)
        se_mom = float(vals.std(ddof=1)) / math.sqrt(reps) / (r * max(mom, 1e-300) ** (r - 1))
        rhs = C_r * (float(table(st[m])) + 2.0 * st[m])
        checks.append(BoundCheck("moment", m, r, mom, float(rhs), se_mom, n_se * se_mom))

        # tail bound over the larger-variance members
        high = st >= st[m] * (1 - 1e-12)
        excess = (D[:, m, high] - 0.5 * Q_nu[high][None, :]).max(axis=1)
        pref = 4.0 * (smin / st[m]) ** (spec.kappa1 / 64.0)
        for k in (0.0, 1.0, 2.0):
            t = k * st[m]
            bound = pref * math.exp(-t * t / (16.0 * st[m] ** 2))
            checks.append(_prob_check("tail", m, k, excess > t, bound, n_se))
    meta = {"C_r": C_r, "kappa1": spec.kappa1, "members": len(theta), "n_se": n_se}
    return ConcentrationReport(tuple(checks), reps, seed, meta)
