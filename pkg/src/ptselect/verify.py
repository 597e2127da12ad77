"""Quick invariant suite behind ``ptselect verify``.

Each check returns a :class:`CheckResult`; the suite is deterministic for a
given seed and runs in well under a minute.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .concentration import concentration_suite
from .func_classes import make_function
from .kernels import (
    PROFILES,
    KernelConstructionError,
    KernelParam,
    convolve_kernels,
    kernel_norms,
    make_base_kernel,
    theta_single_index,
    validate_moments,
)
from .linear_est import estimate_aux, estimate_aux_direct
from .majorant import check_E_condition
from .oracle import bias_aux_sides, semimetric_check
from .wgn_sim import make_grid, sample_field

__all__ = ["CheckResult", "CHECKS", "run_checks"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _kernel_validity(rng, quick):
    worst = 0.0
    orders = range(3) if quick else range(5)
    for name in PROFILES:
        for d in (1, 2):
            for l in orders:
                base = make_base_kernel(name, d, l)
                try:
                    mom = validate_moments(base, d, l, base.breakpoints())
                except KernelConstructionError as exc:
                    return False, f"{name} d={d} l={l}: {exc}"
                worst = max(worst, max(abs(v - (1.0 if sum(k) == 0 else 0.0)) for k, v in mom.items()))
    return True, f"max moment deviation {worst:.2e}"


def _random_pair(rng, d):
    base = make_base_kernel("quartic", d, 0)
    def draw():
        h = tuple(float(v) for v in rng.uniform(0.06, 0.18, size=d))
        ang = float(rng.uniform(0, math.pi)) if d == 2 and rng.random() < 0.5 else 0.0
        return KernelParam("GENERAL", h, ang, base)
    return draw(), draw()


def _proposition1(rng, quick):
    worst = 0.0
    for d, n in ((1, 256), (2, 128)):
        grid = make_grid(d, n, 0.5)
        F = make_function("holder", d=1, alpha=0.7, L=1.0, shape="trig", seed=int(rng.integers(1000)))
        G = (lambda p, F=F: F(p[:, :1]) + 0.3 * np.sin(3.0 * p[:, -1])) if d == 2 else F
        for _ in range(2 if quick else 5):
            mu, nu = _random_pair(rng, d)
            x = rng.uniform(-0.2, 0.2, size=d)
            lhs, rhs = bias_aux_sides(G, mu, nu, x, grid)
            worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-12))
    return worst <= 1e-3, f"max relative error {worst:.2e}"


def _commutativity(rng, quick):
    worst_k, worst_f = 0.0, 0.0
    grid = make_grid(2, 96, 0.5)
    F = make_function("constant", d=2, c=0.0)
    fld = sample_field(F, 0.1, grid, seed=int(rng.integers(1 << 30)))
    for _ in range(3 if quick else 8):
        mu, nu = _random_pair(rng, 2)
        a = convolve_kernels(mu, nu, grid.spacing)
        b = convolve_kernels(nu, mu, grid.spacing)
        worst_k = max(worst_k, float(np.max(np.abs(a.values - b.values))))
        x = np.zeros(2)
        worst_f = max(worst_f, abs(estimate_aux(fld, mu, nu, x) - estimate_aux_direct(fld, mu, nu, x)))
    ok = worst_k <= 1e-10 and worst_f <= 1e-8
    return ok, f"kernel asymmetry {worst_k:.2e}, two-stage vs direct {worst_f:.2e}"


def _closed_forms(rng, quick):
    worst = 0.0
    grid = make_grid(2, 256, 0.25)
    for _ in range(3 if quick else 6):
        mu, _ = _random_pair(rng, 2)
        mu = KernelParam("GENERAL", mu.h, 0.0, mu.base)
        l1, s = kernel_norms(mu, grid)
        worst = max(worst, abs(s - mu.sigma) / mu.sigma, abs(l1 - mu.base.norm_l1) / mu.base.norm_l1)
    return worst <= 5e-3, f"max relative deviation {worst:.2e}"


def _semimetric(rng, quick):
    base = make_base_kernel("quartic", 2, 0)
    theta = theta_single_index(base, 0.1, 0.2, n_angles=4, n_h=3)
    idx = rng.integers(len(theta), size=(4 if quick else 10, 4))
    pairs = [((int(a), int(b)), (int(c), int(e))) for a, b, c, e in idx]
    rep = semimetric_check(theta, pairs, spacing=1.0 / 64.0)
    return rep.ok, f"largest excess over the bounds {max(rep.max_excess_lemma1, rep.max_excess_lemma2):.2e} over {len(pairs)} pairs"


def _concentration(rng, quick):
    rep = concentration_suite(reps=400 if quick else 2000, seed=int(rng.integers(1 << 20)))
    parts = [f"{n} worst {rep.worst_margin(n):+.2f}" for n in ("borell-tis", "moment", "tail")]
    return rep.ok(), "excess in units of the MC slack: " + ", ".join(parts)


def _doubling(rng, quick):
    rep = check_E_condition(lambda s: np.asarray(s, dtype=np.float64), np.geomspace(1.0, 8.0, 7))
    return rep.ok and abs(rep.c_e - 2) < 1e-12 and abs(rep.C_e - 2) < 1e-12, f"(c_e, C_e) = ({rep.c_e:g}, {rep.C_e:g})"


CHECKS: dict[str, Callable] = {
    "kernel validity": _kernel_validity,
    "bias identity": _proposition1,
    "auxiliary commutativity": _commutativity,
    "closed-form norms": _closed_forms,
    "semi-metric bounds": _semimetric,
    "concentration bounds": _concentration,
    "doubling condition": _doubling,
}


def run_checks(seed: int = 0, quick: bool = False) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, fn in CHECKS.items():
        t = time.perf_counter()
        try:
            ok, detail = fn(rng, quick)
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t))
    return out
