"""Expected suprema of the comparison noise process and the majorant ``Q``.

``e(sigma)`` is the largest (over ``mu``) expected supremum of
``|xi_{mu,nu} - xi_nu|`` over the members ``nu`` with ``sigma~_nu <= sigma``.
It is estimated here by Monte Carlo on pure-noise fields, optionally replaced
by calibrated analytic envelopes, and then fed into the majorant variants:

=============  ==============================================================
GENERAL-21     ``k0 e(s) + s sqrt(1 + k1 ln(s / s_min))``
SI-38          ``s [k0 C0 sqrt(ln s) + sqrt(1 + k1 ln(s / s_min))]``
AH-42          ``s [1 + 4 C1 sqrt(ln ln(h_max / h_min))]``
BESOV-44       ``C_B s sqrt(1 + k1 ln(s / s_min))``
MIXED-45       ``C2 s sqrt(1 + ln(1 / eps))``
=============  ==============================================================
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import isotonic_regression

from . import _accel
from .kernels import ThetaGrid
from .linear_est import PairEngine, required_margin
from .wgn_sim import Grid, make_grid, sample_noise_field

__all__ = [
    "VARIANTS",
    "HEADROOM",
    "ETable",
    "EBoundCalibration",
    "EConditionReport",
    "MajorantSpec",
    "MajorantError",
    "e_mc",
    "noise_sup_samples",
    "default_grid",
    "e_shape",
    "calibrate",
    "e_bound",
    "check_E_condition",
    "general_kappas",
    "si_kappas",
    "build_majorant",
    "majorant_Q",
    "lemma_a1_constant",
]

VARIANTS = ("GENERAL-21", "SI-38", "AH-42", "BESOV-44", "MIXED-45")
HEADROOM = 1.1


class MajorantError(ValueError):
    """Invalid arguments for an envelope or majorant evaluation."""


# ---------------------------------------------------------------------------
# Monte Carlo estimate of e(sigma)
# ---------------------------------------------------------------------------


def default_grid(theta: ThetaGrid, spacing: Optional[float] = None) -> Grid:
    """Grid with margin large enough for all auxiliary kernels and an odd cell count."""
    d = theta.params[0].d
    margin = required_margin(theta)
    if spacing is None:
        spacing = min(1.0 / 128.0, theta.h_min / 6.0)
    n = int(math.ceil((1.0 + 2.0 * margin) / spacing))
    n += 1 - n % 2
    return make_grid(d, n, (n * spacing - 1.0) / 2.0)


@dataclass(frozen=True, eq=False)
class ETable:
    """Monte Carlo table of ``e(sigma)`` on the variance levels of a grid.

    ``e_raw`` is the plain MC estimate, ``e_hat`` its isotonic (non-decreasing)
    fit, ``se`` the MC standard error at the maximizing ``mu``.
    """

    sigma: NDArray[np.float64]
    e_raw: NDArray[np.float64]
    e_hat: NDArray[np.float64]
    se: NDArray[np.float64]
    reps: int
    seed: int
    sigma_min: float
    warning: bool = False
    theta_id: str = ""
    calibration: dict = field(default_factory=dict)
    bound: Optional[NDArray[np.float64]] = None

    def __call__(self, s) -> NDArray[np.float64]:
        """Piecewise-linear interpolation of ``e_hat``; linear growth beyond the table."""
        s = np.asarray(s, dtype=np.float64)
        out = np.interp(s, self.sigma, self.e_hat)
        hi = s > self.sigma[-1]
        if np.any(hi):
            out = np.where(hi, self.e_hat[-1] * s / self.sigma[-1], out)
        lo = s < self.sigma[0]
        if np.any(lo):
            out = np.where(lo, self.e_hat[0] * s / self.sigma[0], out)
        return out

    def with_bound(self, calib: "EBoundCalibration") -> "ETable":
        vals = e_bound(calib.variant, self.sigma, calib)
        cal = dict(self.calibration)
        cal[calib.variant] = calib.C
        return ETable(
            self.sigma, self.e_raw, self.e_hat, self.se, self.reps, self.seed, self.sigma_min,
            self.warning, self.theta_id, cal, np.asarray(vals),
        )

    def to_csv(self, path) -> Path:
        path = Path(path)
        bound = self.bound if self.bound is not None else np.full(self.sigma.size, np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "e_hat", "se", "bound"])
            for row in zip(self.sigma, self.e_hat, self.se, bound):
                w.writerow([repr(float(v)) for v in row])
        return path

    @classmethod
    def from_csv(cls, path, reps: int = 0, seed: int = 0) -> "ETable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty table")
        col = {k: np.array([float(r[k]) for r in rows]) for k in ("sigma", "e_hat", "se", "bound")}
        bound = None if np.all(np.isnan(col["bound"])) else col["bound"]
        return cls(
            col["sigma"], col["e_hat"].copy(), col["e_hat"], col["se"], reps, seed,
            float(col["sigma"][0]), bound=bound,
        )


def _level_ends(theta: ThetaGrid) -> tuple[NDArray, NDArray]:
    order = np.argsort(theta.sigma_tilde, kind="stable")
    lev_sorted = theta.level_index[order]
    ends = np.array([np.max(np.nonzero(lev_sorted == lv)[0]) for lv in range(theta.levels.size)])
    return order, ends


def noise_sup_samples(
    theta: ThetaGrid,
    reps: int,
    seed: int,
    grid: Optional[Grid] = None,
    engine: Optional[PairEngine] = None,
    x=None,
    keep_tables: bool = False,
):
    """Per-replication suprema ``S[b, mu, level] = max_{nu: s~_nu <= level} |xi_{mu,nu} - xi_nu|``.

    Returns the array ``S`` of shape ``(reps, |Theta|, n_levels)`` and, when
    ``keep_tables`` is set, the raw ``|xi_{mu,nu} - xi_nu|`` matrices.
    """
    if engine is None:
        engine = PairEngine(theta, grid if grid is not None else default_grid(theta))
    grid = engine.grid
    x = np.zeros(grid.d) if x is None else x
    engine.check_margin(x)
    order, ends = _level_ends(theta)
    out = np.empty((reps, len(theta), ends.size))
    tables = [] if keep_tables else None
    for b in range(reps):
        noise = sample_noise_field(grid, seed, b)
        D = engine.pair_table(noise, x).diff
        out[b] = _accel.level_prefix_max(D, order, ends)
        if keep_tables:
            tables.append(D)
    return (out, np.array(tables)) if keep_tables else out


def e_mc(
    theta: ThetaGrid,
    reps: int = 400,
    seed: int = 0,
    grid: Optional[Grid] = None,
    engine: Optional[PairEngine] = None,
    x=None,
    rel_se_target: float = 0.05,
    samples: Optional[NDArray] = None,
) -> ETable:
    """Monte Carlo estimate of ``e(sigma)`` at every variance level of ``theta``.

    Args:
        theta: finite index grid.
        reps: number of pure-noise replications (at least 100).
        seed: master seed of the noise streams.
        grid: observation grid; defaults to :func:`default_grid`.
        engine: pre-built pair engine (its grid is used).
        x: query node (origin by default); the fields are stationary.
        rel_se_target: the table is flagged when any relative s.e. exceeds it.
        samples: precomputed output of :func:`noise_sup_samples`.

    Returns:
        ETable with isotonic ``e_hat``.
    """
    if reps < 100:
        raise ValueError(f"e_mc needs at least 100 replications; got {reps}")
    S = noise_sup_samples(theta, reps, seed, grid, engine, x) if samples is None else samples
    reps = S.shape[0]
    mean = S.mean(axis=0)
    sd = S.std(axis=0, ddof=1)
    arg = np.argmax(mean, axis=0)
    cols = np.arange(mean.shape[1])
    e_raw = mean[arg, cols]
    se = sd[arg, cols] / math.sqrt(reps)
    e_hat = isotonic_regression(e_raw, increasing=True).x
    flag = bool(np.any(se > rel_se_target * np.maximum(e_hat, 1e-300)))
    if flag:
        warnings.warn("e_mc: standard error above target; increase reps", RuntimeWarning, stacklevel=2)
    return ETable(
        sigma=theta.levels.copy(),
        e_raw=e_raw,
        e_hat=np.asarray(e_hat, dtype=np.float64),
        se=se,
        reps=int(reps),
        seed=int(seed),
        sigma_min=theta.sigma_min,
        warning=flag,
        theta_id=theta.ident,
    )


# ---------------------------------------------------------------------------
# Analytic envelopes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EBoundCalibration:
    """Constant and range data for one analytic envelope of ``e``."""

    variant: str
    C: float
    sigma_min: float
    sigma_max: float
    h_ratio: float = math.e
    floor: float = 0.0


_TOL = 1e-9


def _range_check(s: NDArray, lo: float, hi: float) -> None:
    if np.any(s < lo * (1 - _TOL)) or np.any(s > hi * (1 + _TOL)):
        raise MajorantError(f"sigma outside [{lo:.6g}, {hi:.6g}]")


def e_shape(variant: str, s, sigma_min: float, h_ratio: float = math.e) -> NDArray[np.float64]:
    """Shape functions of the envelopes (constant factor omitted)."""
    s = np.asarray(s, dtype=np.float64)
    if variant == "SI":
        if np.any(s < 1.0):
            raise MajorantError("single-index envelope requires sigma >= 1")
        return s * np.sqrt(np.log(s))
    if variant == "AH":
        if math.log(h_ratio) < 1.0:
            raise MajorantError("anisotropic envelope requires ln(h_max / h_min) >= 1")
        return s * (math.sqrt(math.log(math.log(h_ratio))) + 1.0)
    if variant == "BESOV":
        return s * np.sqrt(np.log1p(np.log(np.maximum(s / sigma_min, 1.0))))
    if variant == "GENERAL":
        return s * np.sqrt(1.0 + np.log(np.maximum(s / sigma_min, 1.0)))
    raise MajorantError(f"unknown envelope variant {variant!r}")


def calibrate(table: ETable, variant: str, sigma_max: Optional[float] = None, h_ratio: float = math.e) -> EBoundCalibration:
    """``C = 1.1 * max_levels e_hat / shape`` so the envelope dominates the table.

    For the Besov shape, which vanishes at ``sigma_min``, the envelope is
    floored at ``C * sigma_min`` and ``C`` also covers ``e_hat(sigma_min) / sigma_min``.
    """
    sig = table.sigma
    smax = float(sig[-1]) if sigma_max is None else sigma_max
    shape = e_shape(variant, sig, table.sigma_min, h_ratio)
    ratios = [float(e / s) for e, s in zip(table.e_hat, shape) if s > 0]
    if variant == "BESOV":
        ratios.append(float(table.e_hat[0] / table.sigma_min))
    if not ratios:
        raise MajorantError(f"no level with positive {variant} shape")
    C = HEADROOM * max(ratios)
    floor = C * table.sigma_min if variant == "BESOV" else 0.0
    return EBoundCalibration(variant, C, table.sigma_min, smax, h_ratio, floor)


def e_bound(variant: str, s, calib: EBoundCalibration) -> NDArray[np.float64]:
    """Calibrated analytic envelope ``C * shape(sigma)`` (with the Besov floor)."""
    s = np.asarray(s, dtype=np.float64)
    _range_check(s, calib.sigma_min, calib.sigma_max)
    vals = calib.C * e_shape(variant, s, calib.sigma_min, calib.h_ratio)
    if variant == "BESOV":
        vals = np.maximum(vals, calib.floor)
    return vals


# ---------------------------------------------------------------------------
# Doubling condition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EConditionReport:
    ok: bool
    c_e: float
    C_e: float
    n_pairs: int
    ratios: tuple[float, ...] = ()
    message: str = ""


def check_E_condition(
    e_source: Union[ETable, Callable],
    sigmas=None,
    sigma_max: Optional[float] = None,
) -> EConditionReport:
    """Empirical bounds of ``e(2 sigma) / e(sigma)`` over the given levels.

    For a table the levels default to its own ``sigma`` column and only pairs
    with ``2 sigma`` inside the table range are used.  When no pair exists the
    linear convention ``c_e = C_e = 2`` is reported.
    """
    if sigmas is None:
        if not isinstance(e_source, ETable):
            raise ValueError("sigmas are required for a callable e source")
        sigmas = e_source.sigma
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if sigma_max is None:
        sigma_max = float(e_source.sigma[-1]) if isinstance(e_source, ETable) else float("inf")
    use = sigmas[2.0 * sigmas <= sigma_max * (1 + _TOL)]
    if use.size == 0:
        return EConditionReport(True, 2.0, 2.0, 0, (), "no doubling pair inside the range; linear convention")
    num = np.asarray(e_source(2.0 * use), dtype=np.float64)
    den = np.asarray(e_source(use), dtype=np.float64)
    if np.any(den <= 0):
        return EConditionReport(False, 0.0, float("inf"), use.size, (), "e vanishes at some level")
    ratios = num / den
    c_e, C_e = float(ratios.min()), float(ratios.max())
    ok = c_e > 1.0
    msg = "" if ok else f"doubling ratio {c_e:.4g} <= 1"
    return EConditionReport(ok, c_e, C_e, int(use.size), tuple(float(r) for r in ratios), msg)


# ---------------------------------------------------------------------------
# Majorant
# ---------------------------------------------------------------------------


def general_kappas(C_e: float, r: float) -> tuple[float, float]:
    return 2.0 * C_e, 128.0 * r * max(1.0, math.log(C_e) / math.log(2.0))


def si_kappas(sigma_min: float, r: float) -> tuple[float, float]:
    if sigma_min <= 1.0:
        raise MajorantError("single-index majorant requires sigma_min > 1")
    return 4.0 * (1.0 + math.sqrt(math.log(2.0) / math.log(sigma_min))), 320.0 * r


@dataclass(frozen=True, eq=False)
class MajorantSpec:
    """Evaluates ``Q(sigma)`` for one variant.

    Attributes:
        variant: one of :data:`VARIANTS`.
        sigma_min, sigma_max: admissible range of ``sigma``.
        r: risk order.
        c_e, C_e: doubling constants of the ``e`` in use.
        kappa0, kappa1: majorant constants.
        e: callable ``e(sigma)`` (GENERAL-21 only).
        e_source: ``"mc"`` or ``"analytic"``.
        constants: variant-specific calibrated constants (``C0``, ``C1``, ...).
    """

    variant: str
    sigma_min: float
    sigma_max: float
    r: float = 2.0
    c_e: float = 2.0
    C_e: float = 2.0
    kappa0: float = 0.0
    kappa1: float = 0.0
    e: Optional[Callable] = None
    e_source: str = "analytic"
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise MajorantError(f"unknown majorant variant {self.variant!r}")

    def Q(self, s) -> NDArray[np.float64]:
        s = np.asarray(s, dtype=np.float64)
        _range_check(s, self.sigma_min, self.sigma_max)
        smin = self.sigma_min
        logterm = np.log(np.maximum(s / smin, 1.0))
        c = self.constants
        if self.variant == "GENERAL-21":
            return self.kappa0 * np.asarray(self.e(s)) + s * np.sqrt(1.0 + self.kappa1 * logterm)
        if self.variant == "SI-38":
            return s * (self.kappa0 * c["C0"] * np.sqrt(np.log(s)) + np.sqrt(1.0 + self.kappa1 * logterm))
        if self.variant == "AH-42":
            return s * (1.0 + 4.0 * c["C1"] * math.sqrt(math.log(math.log(c["h_ratio"]))))
        if self.variant == "BESOV-44":
            return c["C_B"] * s * np.sqrt(1.0 + self.kappa1 * logterm)
        return c["C2"] * s * math.sqrt(1.0 + math.log(1.0 / c["eps"]))

    def __call__(self, s) -> NDArray[np.float64]:
        return self.Q(s)

    def describe(self) -> dict:
        return {
            "variant": self.variant,
            "e_source": self.e_source,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "r": self.r,
            "c_e": self.c_e,
            "C_e": self.C_e,
            "kappa0": self.kappa0,
            "kappa1": self.kappa1,
            **{k: v for k, v in self.constants.items()},
        }


def majorant_Q(s, spec: MajorantSpec) -> NDArray[np.float64]:
    """``Q(sigma)`` for the given spec; errors outside ``[sigma_min, sigma_max]``."""
    return spec.Q(s)


def build_majorant(
    variant: str,
    theta: ThetaGrid,
    table: Optional[ETable] = None,
    r: float = 2.0,
    eps: Optional[float] = None,
    e_source: str = "mc",
    e: Optional[Callable] = None,
) -> MajorantSpec:
    """Construct a majorant for ``theta``, calibrating constants from ``table``.

    GENERAL-21 uses the Monte Carlo table itself as ``e`` when
    ``e_source == "mc"`` and the doubling condition holds; otherwise it falls
    back to the calibrated envelope ``c sigma sqrt(1 + ln(sigma / sigma_min))``.
    """
    smin, smax = theta.sigma_min, theta.sigma_max
    h_ratio = theta.h_max / theta.h_min
    if variant not in VARIANTS:
        raise MajorantError(f"unknown majorant variant {variant!r}")
    if variant == "GENERAL-21" and e is not None:
        rep = check_E_condition(e, theta.levels, smax)
        if not rep.ok:
            raise MajorantError(f"supplied e violates the doubling condition: {rep.message}")
        k0, k1 = general_kappas(rep.C_e, r)
        return MajorantSpec(variant, smin, smax, r, rep.c_e, rep.C_e, k0, k1, e, "given")
    if table is None:
        raise MajorantError(f"{variant} needs an e table for calibration")

    if variant == "GENERAL-21":
        src = e_source
        e_fn: Callable = table
        rep = check_E_condition(table, sigma_max=smax)
        consts: dict = {}
        if e_source != "mc" or not rep.ok:
            cal = calibrate(table, "GENERAL", smax)
            e_fn = lambda s, cal=cal: e_bound("GENERAL", s, cal)  # noqa: E731
            rep = check_E_condition(e_fn, theta.levels, smax)
            src = "analytic"
            consts["C_general"] = cal.C
        k0, k1 = general_kappas(rep.C_e, r)
        return MajorantSpec(variant, smin, smax, r, rep.c_e, rep.C_e, k0, k1, e_fn, src, consts)

    if variant == "SI-38":
        cal = calibrate(table, "SI", smax)
        k0, k1 = si_kappas(smin, r)
        C_e = 2.0 * (1.0 + math.sqrt(math.log(2.0) / math.log(smin)))
        return MajorantSpec(variant, smin, smax, r, 2.0, C_e, k0, k1, None, "analytic", {"C0": cal.C})

    if variant == "AH-42":
        if math.log(h_ratio) < 1.0:
            raise MajorantError("AH majorant requires ln(h_max / h_min) >= 1")
        lnln = math.sqrt(math.log(math.log(h_ratio)))
        C1 = HEADROOM * float(np.max(table.e_hat / (table.sigma * max(lnln, 1e-12))))
        return MajorantSpec(variant, smin, smax, r, 2.0, 2.0, 0.0, 0.0, None, "analytic", {"C1": C1, "h_ratio": h_ratio})

    if variant == "BESOV-44":
        cal = calibrate(table, "BESOV", smax)
        fn = lambda s, cal=cal: e_bound("BESOV", np.minimum(s, smax), cal) * np.maximum(1.0, s / smax)  # noqa: E731
        rep = check_E_condition(fn, theta.levels, smax)
        c_e, C_e = (rep.c_e, rep.C_e) if rep.ok else (2.0, 2.0)
        k0, k1 = general_kappas(C_e, r)
        C_B = 1.0 + k0 * cal.C
        return MajorantSpec(variant, smin, smax, r, c_e, C_e, k0, k1, None, "analytic", {"C3": cal.C, "C_B": C_B})

    # MIXED-45
    if eps is None or not (0.0 < eps < 1.0):
        raise MajorantError("MIXED-45 majorant needs eps in (0, 1)")
    C2 = 2.0 * HEADROOM * float(np.max(table.e_hat / table.sigma))
    return MajorantSpec(variant, smin, smax, r, 2.0, 2.0, 0.0, 0.0, None, "analytic", {"C2": C2, "eps": eps})


def lemma_a1_constant(r: float) -> float:
    """``C_r = [8 r int_0^inf (t v 1)^{r-1} exp(-t^2 / 2) dt]^{1/r}``."""
    from scipy.integrate import quad

    part1, _ = quad(lambda t: math.exp(-t * t / 2.0), 0.0, 1.0)
    part2, _ = quad(lambda t: t ** (r - 1.0) * math.exp(-t * t / 2.0), 1.0, math.inf)
    return (8.0 * r * (part1 + part2)) ** (1.0 / r)
