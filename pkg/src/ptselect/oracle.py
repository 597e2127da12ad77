"""Truth-dependent diagnostics: biases, the oracle set and semi-metric bounds.

Everything here uses the true function ``F`` and is meant for testing and
benchmarking, never for estimation.  Biases are computed on the same grid
discretization as the estimators: ``B_mu(y) = sum_k Kbar_mu[k] F(y + k) vol - F(y)``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .kernels import KernelParam, ThetaGrid, convolve_kernels, tabulate
from .linear_est import PairEngine, _window, estimate, estimate_aux_direct, estimate_field
from .majorant import MajorantSpec
from .wgn_sim import Grid, ObservationField

__all__ = [
    "OracleReport",
    "ThetaFResult",
    "SemimetricReport",
    "noiseless_field",
    "bias",
    "bias_field",
    "bias_aux_delta",
    "bias_aux_sides",
    "integrated_bias",
    "integrated_bias_all",
    "theta_F",
    "oracle_report",
    "semimetric_check",
    "rho_exact",
    "lemma1_bound",
    "lemma2_bound",
]


def noiseless_field(F: Callable, grid: Grid) -> ObservationField:
    """Field with ``eps = 0``: increments ``F(t_i) * vol``."""
    vals = np.asarray(F(grid.points().reshape(-1, grid.d)), dtype=np.float64).reshape(grid.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("test function is not finite on the grid")
    return ObservationField(grid, vals * grid.cell_volume, eps=0.0, seed=0, truth_id=getattr(F, "tag", None))


def _truth_at(F: Callable, grid: Grid, x) -> float:
    return float(np.asarray(F(grid.snap(x).reshape(1, -1))).reshape(-1)[0])


def bias(F: Callable, mu: KernelParam, y, grid: Grid) -> float:
    """``B_mu(y) = int K_mu(t, y) F(t) dt - F(y)`` by cell sums."""
    return estimate(noiseless_field(F, grid), mu, y) - _truth_at(F, grid, y)


def bias_field(F: Callable, mu: KernelParam, grid: Grid, field0: Optional[ObservationField] = None):
    """``B_mu`` at every node, with the mask of nodes where it is defined."""
    f0 = noiseless_field(F, grid) if field0 is None else field0
    est = estimate_field(f0, mu)
    truth = f0.increments / grid.cell_volume
    return est.values - truth, est.valid


def bias_aux_sides(F: Callable, mu: KernelParam, nu: KernelParam, x, grid: Grid) -> tuple[float, float]:
    """Both sides of ``B_{mu,nu}(x) - B_nu(x) = int K_nu(y, x) B_mu(y) dy``.

    The left side uses the tabulated auxiliary kernel directly; the right side
    smooths the bias field of ``mu`` with ``K_nu``.
    """
    f0 = noiseless_field(F, grid)
    lhs = estimate_aux_direct(f0, mu, nu, x) - estimate(f0, nu, x)
    bmu, valid = bias_field(F, mu, grid, f0)
    st = tabulate(nu, grid.spacing)
    c = grid.node_index(x)
    if not np.all(_window(valid, c, st.radius)[st.values != 0]):
        raise ValueError("bias field of mu is undefined inside the support of K_nu; enlarge the margin")
    rhs = float(np.sum(st.values * _window(bmu, c, st.radius)) * grid.cell_volume)
    return lhs, rhs


def bias_aux_delta(F: Callable, mu: KernelParam, nu: KernelParam, x, grid: Grid) -> float:
    """``B_{mu,nu}(x) - B_nu(x)`` via the auxiliary kernel (see :func:`bias_aux_sides`)."""
    return bias_aux_sides(F, mu, nu, x, grid)[0]


def integrated_bias_all(F: Callable, theta: ThetaGrid, x, grid: Grid, engine: Optional[PairEngine] = None):
    """Vectors ``(B_mu(x), B~_mu(x))`` over the whole grid.

    ``B~_mu = max(max_nu |B_{mu,nu}(x) - B_nu(x)|, |B_mu(x)|)``; with noiseless
    data ``B_{mu,nu} - B_nu`` is exactly the pair-table difference.
    """
    engine = PairEngine(theta, grid) if engine is None else engine
    f0 = noiseless_field(F, grid)
    tab = engine.pair_table(f0, x)
    fx = _truth_at(F, grid, x)
    B = tab.single - fx
    Bt = np.maximum(tab.diff.max(axis=1), np.abs(B))
    return B, Bt


def integrated_bias(F: Callable, mu: KernelParam, theta: ThetaGrid, x, grid: Grid) -> float:
    """``B~_mu(x)`` for one member, by explicit loops over ``nu``."""
    if mu not in theta.index_of:
        raise ValueError(f"{mu.label()} is not a member of the grid")
    best = abs(bias(F, mu, x, grid))
    for nu in theta.params:
        best = max(best, abs(bias_aux_delta(F, mu, nu, x, grid)))
    return best


@dataclass(frozen=True, eq=False)
class ThetaFResult:
    members: NDArray[np.bool_]
    mu_star: Optional[int]
    B: NDArray[np.float64]
    B_tilde: NDArray[np.float64]
    threshold: NDArray[np.float64]

    @property
    def empty(self) -> bool:
        return self.mu_star is None


def theta_F(
    F: Callable,
    theta: ThetaGrid,
    eps: float,
    spec: MajorantSpec,
    x=None,
    grid: Optional[Grid] = None,
    engine: Optional[PairEngine] = None,
    B_pair: Optional[tuple[NDArray, NDArray]] = None,
) -> ThetaFResult:
    """Oracle set and oracle index.

    ``mu`` belongs to the set iff every variance level ``>= s~_mu`` holds some
    ``theta`` with ``B~_theta <= eps Q(s~_theta) / 4``.  The oracle index is
    the member of minimal ``s~`` (then lexicographic in ``(h, angle)``).
    """
    if B_pair is None:
        if grid is None:
            grid = engine.grid if engine is not None else None
        if grid is None:
            raise ValueError("theta_F needs a grid or an engine")
        x = np.zeros(grid.d) if x is None else x
        B, Bt = integrated_bias_all(F, theta, x, grid, engine)
    else:
        B, Bt = B_pair
    thr = 0.25 * eps * spec.Q(theta.sigma_tilde)
    good = Bt <= thr
    nlev = theta.levels.size
    level_good = np.zeros(nlev, dtype=bool)
    np.logical_or.at(level_good, theta.level_index, good)
    # suffix_all[l] = all levels >= l are good
    suffix_all = np.flip(np.logical_and.accumulate(np.flip(level_good)))
    members = suffix_all[theta.level_index]
    if not np.any(members):
        return ThetaFResult(members, None, B, Bt, thr)
    cand = np.nonzero(members)[0]
    star = int(cand[np.argmin(theta.rank[cand])])
    return ThetaFResult(members, star, B, Bt, thr)


@dataclass(frozen=True, eq=False)
class OracleReport:
    eps: float
    x: tuple[float, ...]
    theta_id: str
    B: NDArray[np.float64]
    B_tilde: NDArray[np.float64]
    members: NDArray[np.bool_]
    mu_star: Optional[int]
    mu_star_label: Optional[str]
    bound: Optional[float]
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "x": list(self.x),
            "theta_id": self.theta_id,
            "mu_star": self.mu_star,
            "mu_star_label": self.mu_star_label,
            "bound_eps_Q": self.bound,
            "theta_F_size": int(np.sum(self.members)),
            "B": [float(v) for v in self.B],
            "B_tilde": [float(v) for v in self.B_tilde],
            "in_theta_F": [bool(v) for v in self.members],
            **self.meta,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def oracle_report(F, theta: ThetaGrid, eps: float, spec: MajorantSpec, x, grid: Grid, engine=None) -> OracleReport:
    res = theta_F(F, theta, eps, spec, x, grid, engine)
    star = res.mu_star
    bound = None if star is None else float(eps * spec.Q(theta.sigma_tilde[star]))
    return OracleReport(
        eps=float(eps),
        x=tuple(float(v) for v in grid.snap(x)),
        theta_id=theta.ident,
        B=res.B,
        B_tilde=res.B_tilde,
        members=res.members,
        mu_star=star,
        mu_star_label=None if star is None else theta.params[star].label(),
        bound=bound,
    )


# ---------------------------------------------------------------------------
# Semi-metric of the comparison process
# ---------------------------------------------------------------------------


def _embed(values: NDArray, radius: Sequence[int], target: Sequence[int]) -> NDArray:
    out = np.zeros(tuple(2 * t + 1 for t in target))
    sl = tuple(slice(t - r, t + r + 1) for r, t in zip(radius, target))
    out[sl] = values
    return out


def _comparison_stencil(mu: KernelParam, nu: KernelParam, spacing: float, target) -> NDArray:
    """Stencil of ``K_{nu,mu} - K_nu`` embedded in a block of half-width ``target``."""
    aux = convolve_kernels(nu, mu, spacing)
    st = tabulate(nu, spacing)
    return _embed(aux.values, aux.radius, target) - _embed(st.values, st.radius, target)


def rho_exact(theta: ThetaGrid, pair_a, pair_b, spacing: float) -> float:
    """``|| (K_{nu,mu} - K_nu) - (K_{nu',mu'} - K_{nu'}) ||_2`` on the grid.

    ``pair_a = (mu, nu)`` and ``pair_b = (mu', nu')`` are member indices.
    """
    p = theta.params
    (m, n), (m2, n2) = pair_a, pair_b
    target = []
    for i in range(p[0].d):
        target.append(max(tabulate(p[a], spacing).radius[i] + tabulate(p[b], spacing).radius[i] for a, b in ((m, n), (m2, n2))))
    a = _comparison_stencil(p[m], p[n], spacing, target)
    b = _comparison_stencil(p[m2], p[n2], spacing, target)
    return float(math.sqrt(np.sum((a - b) ** 2) * spacing ** p[0].d))


def _rho_bar(lam: KernelParam, lam2: KernelParam, spacing: float) -> float:
    """``|| K_lam / ||K_lam||_2 - K_lam' / ||K_lam'||_2 ||_2`` on the grid."""
    a, b = tabulate(lam, spacing), tabulate(lam2, spacing)
    target = [max(ra, rb) for ra, rb in zip(a.radius, b.radius)]
    vol = spacing**lam.d
    va = _embed(a.values, a.radius, target)
    vb = _embed(b.values, b.radius, target)
    va = va / math.sqrt(np.sum(va * va) * vol)
    vb = vb / math.sqrt(np.sum(vb * vb) * vol)
    return float(math.sqrt(np.sum((va - vb) ** 2) * vol))


def _rho_under(lam: KernelParam, lam2: KernelParam) -> float:
    return abs(1.0 - lam.sigma / lam2.sigma)


def lemma1_bound(theta: ThetaGrid, pair_a, pair_b, spacing: float) -> float:
    """``2 s~_nu [rho_bar + rho_under](nu, nu') + s~_mu [rho_bar + rho_under](mu, mu')``."""
    p = theta.params
    (m, n), (m2, n2) = pair_a, pair_b
    t_nu = _rho_bar(p[n], p[n2], spacing) + _rho_under(p[n], p[n2])
    t_mu = _rho_bar(p[m], p[m2], spacing) + _rho_under(p[m], p[m2])
    return 2.0 * p[n].sigma_tilde * t_nu + p[m].sigma_tilde * t_mu


def lemma2_bound(nu: KernelParam, nu2: KernelParam, h_min: float) -> float:
    """Bandwidth/rotation perturbation bound for pairs sharing ``mu``."""
    base = nu.base
    M, d = base.grad_bound, nu.d
    h, h2 = np.asarray(nu.h), np.asarray(nu2.h)
    term_h = M * math.sqrt(float(np.sum((1.0 - h / h2) ** 2)))
    term_v = 2.0 * abs(1.0 - float(np.prod(h2 / h)))
    term_e = M * d / h_min * float(np.linalg.norm(nu.E - nu2.E, ord="fro"))
    return 2.0 * nu.sigma_tilde * (term_h + term_v + term_e)


@dataclass(frozen=True)
class SemimetricReport:
    exact: tuple[float, ...]
    lemma1: tuple[float, ...]
    lemma2: tuple[Optional[float], ...]
    max_excess_lemma1: float
    max_excess_lemma2: float

    @property
    def ok(self) -> bool:
        return self.max_excess_lemma1 <= 0.0 and self.max_excess_lemma2 <= 0.0


def semimetric_check(theta: ThetaGrid, pairs, spacing: float, rel_slack: float = 1e-3) -> SemimetricReport:
    """Compare exact semi-metric values with the two analytic bounds.

    ``pairs`` is a sequence of ``((mu, nu), (mu', nu'))`` index pairs.  The
    second bound applies only when ``mu == mu'``.  Reported excesses are
    ``exact - bound * (1 + rel_slack)`` maximized over pairs.
    """
    ex, b1, b2 = [], [], []
    worst1, worst2 = -math.inf, -math.inf
    for pa, pb in pairs:
        rho = rho_exact(theta, pa, pb, spacing)
        l1 = lemma1_bound(theta, pa, pb, spacing)
        ex.append(rho)
        b1.append(l1)
        worst1 = max(worst1, rho - l1 * (1 + rel_slack))
        if pa[0] == pb[0]:
            l2 = lemma2_bound(theta.params[pa[1]], theta.params[pb[1]], theta.h_min)
            b2.append(l2)
            worst2 = max(worst2, rho - l2 * (1 + rel_slack))
        else:
            b2.append(None)
    return SemimetricReport(tuple(ex), tuple(b1), tuple(b2), worst1, worst2 if worst2 > -math.inf else -math.inf)
