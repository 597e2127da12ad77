"""Pointwise selection rule over a finite kernel grid.

For each ``mu`` the rule computes

    R_mu = max_{nu: s~_nu >= s~_mu} ( |F_{mu,nu}(x) - F_nu(x)| - eps Q(s~_nu) / 2 )

and selects the exact grid minimizer of ``R_mu + eps Q(s~_mu)``.  Ties are
broken toward the smallest ``s~_mu`` (largest bandwidth) and then
lexicographically on ``(h, angle)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from . import _accel
from .kernels import KernelParam, ThetaGrid
from .linear_est import PairEngine, PairTable, estimate, estimate_aux
from .majorant import MajorantSpec

__all__ = ["SelectionResult", "r_hat", "r_hat_all", "select", "select_from_table", "check_spec"]

_SIG_RTOL = 1e-12
_TIE_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Outcome of one selection at one node.

    Attributes:
        index: position of the selected kernel in ``theta.params``.
        mu: selected kernel.
        estimate: ``F_mu(x)`` for the selected kernel.
        delta: ``eps Q(sigma_min) / 4``.
        sigma_tilde: per-member ``s~_mu``.
        r_hat: per-member ``R_mu``.
        criterion: per-member ``R_mu + eps Q(s~_mu)``.
        estimates: per-member ``F_mu(x)``.
        ties: indices whose criterion equals the minimum (before the tie-break).
    """

    index: int
    mu: KernelParam
    estimate: float
    delta: float
    sigma_tilde: NDArray[np.float64]
    r_hat: NDArray[np.float64]
    criterion: NDArray[np.float64]
    estimates: NDArray[np.float64]
    ties: tuple[int, ...]
    theta: ThetaGrid

    def trace_rows(self) -> list[list]:
        d = self.mu.d
        rows = [["mu_id"] + [f"h{i + 1}" for i in range(d)] + ["angle", "sigma_tilde", "r_hat", "criterion", "selected_flag"]]
        for i, mu in enumerate(self.theta.params):
            rows.append(
                [i, *[repr(v) for v in mu.h], repr(mu.angle), repr(float(self.sigma_tilde[i])),
                 repr(float(self.r_hat[i])), repr(float(self.criterion[i])), int(i == self.index)]
            )
        return rows

    def write_trace_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.trace_rows())
        return path


def check_spec(theta: ThetaGrid, spec: MajorantSpec) -> None:
    if abs(spec.sigma_min - theta.sigma_min) > 1e-9 * theta.sigma_min:
        raise ValueError(
            f"majorant sigma_min {spec.sigma_min:.12g} does not match the grid's {theta.sigma_min:.12g}"
        )


def r_hat_all(table: PairTable, theta: ThetaGrid, q_vals: NDArray, eps: float) -> NDArray[np.float64]:
    """``R_mu`` for every member from a pair table."""
    thr = 0.5 * eps * np.asarray(q_vals, dtype=np.float64)
    return _accel.criterion_scan(table.diff, thr, theta.sigma_tilde, _SIG_RTOL)


def _argmin_with_ties(crit: NDArray, theta: ThetaGrid) -> tuple[int, tuple[int, ...]]:
    best = float(np.min(crit))
    tol = _TIE_ATOL * max(1.0, abs(best))
    ties = np.nonzero(crit <= best + tol)[0]
    pick = int(ties[np.argmin(theta.rank[ties])])
    return pick, tuple(int(t) for t in ties)


def select_from_table(
    table: PairTable, theta: ThetaGrid, spec: MajorantSpec, eps: float, q_vals: Optional[NDArray] = None
) -> SelectionResult:
    """Run the rule on a precomputed pair table."""
    check_spec(theta, spec)
    sig = theta.sigma_tilde
    q = spec.Q(sig) if q_vals is None else np.asarray(q_vals)
    if not (np.all(np.isfinite(table.aux)) and np.all(np.isfinite(table.single))):
        raise ValueError("non-finite estimator value; the observation field is corrupt")
    R = r_hat_all(table, theta, q, eps)
    crit = R + eps * q
    idx, ties = _argmin_with_ties(crit, theta)
    delta = 0.25 * eps * float(spec.Q(theta.sigma_min))
    return SelectionResult(
        index=idx,
        mu=theta.params[idx],
        estimate=float(table.single[idx]),
        delta=delta,
        sigma_tilde=sig,
        r_hat=R,
        criterion=crit,
        estimates=table.single,
        ties=ties,
        theta=theta,
    )


def select(field, theta: ThetaGrid, spec: MajorantSpec, x, engine: Optional[PairEngine] = None) -> SelectionResult:
    """Select the kernel at node ``x`` for an observation field."""
    if len(theta) == 0:
        raise ValueError("empty Theta grid")
    if engine is None or engine.theta is not theta or engine.grid != field.grid:
        engine = PairEngine(theta, field.grid)
    table = engine.pair_table(field, x)
    return select_from_table(table, theta, spec, field.eps)


def r_hat(field, mu: KernelParam, theta: ThetaGrid, spec: MajorantSpec, x) -> float:
    """``R_mu`` for a single member, computed directly from the two-stage estimates."""
    check_spec(theta, spec)
    if mu not in theta.index_of:
        raise ValueError(f"{mu.label()} is not a member of the grid")
    s_mu = mu.sigma_tilde
    best = -math.inf
    for nu in theta.params:
        if nu.sigma_tilde >= s_mu * (1.0 - _SIG_RTOL):
            diff = abs(estimate_aux(field, mu, nu, x) - estimate(field, nu, x))
            best = max(best, diff - 0.5 * field.eps * float(spec.Q(nu.sigma_tilde)))
    return best
