"""Monte Carlo risk experiments, rate fitting and artifact output.

An experiment is described by an INI file with the sections

``[experiment]``
    ``name``, ``d``, ``risk`` (``pointwise`` or ``global``), ``r``, ``reps``,
    ``seed``, ``x`` (pointwise query node) or ``x_nodes`` (nodes per axis of
    the global x-grid), ``spacing``, ``h_floor_cells``, ``logfactor``
    (``sqrt_ln``, ``sqrt_lnln`` or ``none``), optional ``target`` and
    ``trace_samples``.
``[eps]``
    ``values`` (comma separated) or ``start``, ``ratio`` and ``count``.
``[function]``
    ``id`` plus keyword parameters of the registered test function.
``[family:NAME]`` (one or more)
    ``family`` (``SI``, ``BESOV``, ``AH``, ``GENERAL``, ``MIXED``),
    ``profile``, ``order``, ``h_min``, ``h_max``, ``n_h``, ``n_angles``,
    ``angle_c``, ``gamma``, ``majorant``, ``e_source``, ``e_reps``.

Bandwidth rules: ``h_min = eps2`` means ``max(eps^2, h_floor_cells * spacing)``;
``h_max`` is a number, ``holder`` (``eps^(2 / (2 alpha_max + 1))``, with
``alpha_max`` read from the family section) or ``besov`` (``eps^(2/(2s+d))``
in the dense case and ``1/2`` otherwise).
"""

from __future__ import annotations

import ast
import configparser
import csv
import json
import math
import platform
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from . import _accel
from .func_classes import TestFunction, make_function
from .kernels import (
    ThetaGrid,
    make_base_kernel,
    theta_aniso,
    theta_besov,
    theta_general,
    theta_mixed,
    theta_single_index,
)
from .linear_est import PairEngine, required_margin
from .majorant import VARIANTS, ETable, MajorantSpec, build_majorant, e_mc
from .oracle import oracle_report, theta_F
from .selector import select_from_table
from .wgn_sim import Grid, make_grid, sample_field

__all__ = [
    "FamilyConfig",
    "ExperimentConfig",
    "RiskReport",
    "RateFit",
    "load_config",
    "parse_config",
    "build_theta",
    "experiment_grid",
    "phi_eps",
    "besov_case",
    "logfactor",
    "fit_rate",
    "rate_fit",
    "pointwise_risk",
    "global_risk",
    "run_experiment",
    "dry_run",
    "bundled_configs",
    "bundled_config",
]

LOGFACTORS = ("sqrt_ln", "sqrt_lnln", "none")
FAMILIES = ("SI", "BESOV", "AH", "GENERAL", "MIXED")
MIN_REPS = 50


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FamilyConfig:
    name: str
    family: str
    profile: str = "quartic"
    order: int = 0
    h_min: str = "eps2"
    h_max: str = "0.5"
    n_h: Optional[int] = None
    n_angles: Optional[int] = None
    angle_c: float = 0.25
    gamma: Optional[float] = None
    alpha_max: Optional[float] = None
    majorant: str = "MIXED-45"
    e_source: str = "mc"
    e_reps: int = 400


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    d: int
    function: str
    function_params: dict
    families: tuple[FamilyConfig, ...]
    eps: tuple[float, ...]
    reps: int = 200
    seed: int = 0
    risk: str = "pointwise"
    r: float = 2.0
    x: tuple[float, ...] = ()
    x_nodes: int = 1
    spacing: float = 1.0 / 64.0
    h_floor_cells: float = 4.0
    logfactor: str = "none"
    target: Optional[float] = None
    trace_samples: int = 1
    source: str = ""

    def __post_init__(self):
        validate_config(self)

    def family(self, name: str) -> FamilyConfig:
        for fc in self.families:
            if fc.name == name:
                return fc
        raise KeyError(f"config {self.name!r} has no family {name!r}; have {[f.name for f in self.families]}")

    def x_points(self) -> NDArray[np.float64]:
        """Query nodes: the single ``x`` or the centres of an ``x_nodes^d`` grid over ``[-1/2, 1/2]^d``."""
        if self.risk == "pointwise":
            return np.asarray([self.x], dtype=np.float64)
        c = -0.5 + (np.arange(self.x_nodes) + 0.5) / self.x_nodes
        mesh = np.meshgrid(*([c] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def validate_config(cfg: ExperimentConfig) -> None:
    eps = np.asarray(cfg.eps, dtype=np.float64)
    if eps.size == 0:
        raise ValueError("config has an empty eps grid")
    if np.any(eps <= 0) or np.any(eps >= 1):
        raise ValueError(f"eps values must lie in (0, 1); got {cfg.eps}")
    if np.any(np.diff(eps) >= 0):
        raise ValueError(f"eps grid must be strictly decreasing; got {cfg.eps}")
    if cfg.reps < MIN_REPS:
        raise ValueError(f"replications must be at least {MIN_REPS}; got {cfg.reps}")
    if cfg.risk not in ("pointwise", "global"):
        raise ValueError(f"risk must be 'pointwise' or 'global'; got {cfg.risk!r}")
    if cfg.logfactor not in LOGFACTORS:
        raise ValueError(f"logfactor must be one of {LOGFACTORS}; got {cfg.logfactor!r}")
    if cfg.r < 1:
        raise ValueError(f"risk order r must be >= 1; got {cfg.r}")
    if cfg.risk == "pointwise" and len(cfg.x) != cfg.d:
        raise ValueError(f"pointwise risk needs x with {cfg.d} coordinates; got {cfg.x}")
    if cfg.x_nodes < 1:
        raise ValueError("x_nodes must be positive")
    if not cfg.families:
        raise ValueError("config defines no [family:NAME] section")
    for fc in cfg.families:
        if fc.family not in FAMILIES:
            raise ValueError(f"family {fc.name!r}: unknown kind {fc.family!r}; expected one of {FAMILIES}")
        if fc.majorant not in VARIANTS:
            raise ValueError(f"family {fc.name!r}: unknown majorant {fc.majorant!r}")
        if fc.family == "AH" and fc.gamma is None:
            raise ValueError(f"family {fc.name!r}: AH needs gamma")
        if fc.e_reps < 100:
            raise ValueError(f"family {fc.name!r}: e_reps must be at least 100")


def _literal(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _number(text: str) -> float:
    """Float literal or a simple fraction such as ``2/3``."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        return float(Fraction(text))


def _tuple(text: str) -> tuple[float, ...]:
    val = _literal(text)
    if isinstance(val, (int, float)):
        return (float(val),)
    return tuple(float(v) for v in val)


def _opt(sec, key, conv, default=None):
    return conv(sec[key]) if key in sec and sec[key].strip() != "" else default


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse the INI text of an experiment."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ValueError(f"{source}: {exc}") from exc
    for sec in ("experiment", "eps", "function"):
        if not cp.has_section(sec):
            raise ValueError(f"{source}: missing [{sec}] section")
    ex = cp["experiment"]
    d = int(ex.get("d", "1"))
    es = cp["eps"]
    if "values" in es:
        eps = _tuple(es["values"])
    else:
        start, ratio, count = float(es["start"]), float(es["ratio"]), int(es["count"])
        eps = tuple(start * ratio**k for k in range(count))
    fn = dict(cp["function"])
    fid = fn.pop("id", None)
    if fid is None:
        raise ValueError(f"{source}: [function] needs an id")
    params = {k: _literal(v) for k, v in fn.items()}
    params.setdefault("d", d)
    fams = []
    for sec in cp.sections():
        if not sec.startswith("family:"):
            continue
        s = cp[sec]
        name = sec.split(":", 1)[1].strip()
        fams.append(
            FamilyConfig(
                name=name,
                family=s.get("family", name).strip(),
                profile=s.get("profile", "quartic").strip(),
                order=int(s.get("order", "0")),
                h_min=s.get("h_min", "eps2").strip(),
                h_max=s.get("h_max", "0.5").strip(),
                n_h=_opt(s, "n_h", int),
                n_angles=_opt(s, "n_angles", int),
                angle_c=float(s.get("angle_c", "0.25")),
                gamma=_opt(s, "gamma", _number),
                alpha_max=_opt(s, "alpha_max", float),
                majorant=s.get("majorant", "MIXED-45").strip(),
                e_source=s.get("e_source", "mc").strip(),
                e_reps=int(s.get("e_reps", "400")),
            )
        )
    x = _opt(ex, "x", _tuple, ())
    return ExperimentConfig(
        name=ex.get("name", Path(source).stem).strip(),
        d=d,
        function=fid.strip(),
        function_params=params,
        families=tuple(fams),
        eps=tuple(float(e) for e in eps),
        reps=int(ex.get("reps", "200")),
        seed=int(ex.get("seed", "0")),
        risk=ex.get("risk", "pointwise").strip(),
        r=float(ex.get("r", "2")),
        x=x,
        x_nodes=int(ex.get("x_nodes", "1")),
        spacing=_number(ex.get("spacing", "0.015625")),
        h_floor_cells=float(ex.get("h_floor_cells", "4")),
        logfactor=ex.get("logfactor", "none").strip(),
        target=_opt(ex, "target", _number),
        trace_samples=int(ex.get("trace_samples", "1")),
        source=text,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path))


def bundled_configs() -> dict[str, Path]:
    """Bundled desk-scale configs keyed by experiment name."""
    root = Path(__file__).parent / "configs"
    return {p.stem: p for p in sorted(root.glob("*.ini"))}


def bundled_config(name: str) -> ExperimentConfig:
    table = bundled_configs()
    if name not in table:
        raise KeyError(f"no bundled config {name!r}; have {sorted(table)}")
    return load_config(table[name])


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------


def logfactor(kind: str, eps) -> NDArray[np.float64]:
    eps = np.asarray(eps, dtype=np.float64)
    if kind == "sqrt_ln":
        return np.sqrt(np.log(1.0 / eps))
    if kind == "sqrt_lnln":
        inner = np.log(np.log(1.0 / eps))
        if np.any(inner <= 0):
            raise ValueError("sqrt_lnln log factor needs eps < 1/e")
        return np.sqrt(inner)
    if kind == "none":
        return np.ones_like(eps)
    raise ValueError(f"unknown log factor {kind!r}")


def besov_case(s: float, p: float, r: float, d: int) -> str:
    """``dense``, ``boundary`` or ``sparse`` by exact comparison of ``s p`` with ``d (r - p) / 2``."""
    lhs, rhs = s * p, d * (r - p) / 2.0
    if lhs > rhs:
        return "dense"
    if lhs == rhs:
        return "boundary"
    return "sparse"


def phi_eps(eps, s: float, p: float, r: float, d: int) -> NDArray[np.float64]:
    """Minimax rate over the Besov ball in ``L_r`` for the three regimes."""
    eps = np.asarray(eps, dtype=np.float64)
    case = besov_case(s, p, r, d)
    if case == "dense":
        return eps ** (s / (s + d / 2.0))
    lead = eps * np.sqrt(np.log(1.0 / eps))
    if case == "boundary":
        return lead ** (s / (s + d / 2.0)) * np.log(1.0 / eps) ** (1.0 / r)
    expo = (s - d * (1.0 / p - 1.0 / r)) / (s - d * (1.0 / p - 0.5))
    return lead**expo


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    ci: tuple[float, float]
    stderr: float
    residuals: NDArray[np.float64]
    x: NDArray[np.float64]
    level: float

    def fitted(self) -> NDArray[np.float64]:
        return self.intercept + self.slope * self.x


def fit_rate(eps, risk, kind: str = "none", level: float = 0.95) -> RateFit:
    """Least-squares slope of ``ln risk`` on ``ln(eps * logfactor(eps))``."""
    eps = np.asarray(eps, dtype=np.float64)
    risk = np.asarray(risk, dtype=np.float64)
    if eps.size != risk.size:
        raise ValueError("eps and risk must have the same length")
    if eps.size < 4:
        raise ValueError(f"rate fit needs at least 4 eps points; got {eps.size}")
    if np.any(~np.isfinite(risk)) or np.any(risk <= 0):
        raise ValueError("risks must be finite and positive")
    y = np.log(risk)
    if np.ptp(y) == 0.0:
        raise ValueError("degenerate risks: all values are equal")
    x = np.log(eps * logfactor(kind, eps))
    res = stats.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    q = stats.t.ppf(0.5 + level / 2.0, eps.size - 2)
    half = float(q * res.stderr)
    return RateFit(float(res.slope), float(res.intercept), (res.slope - half, res.slope + half),
                   float(res.stderr), resid, x, level)


# ---------------------------------------------------------------------------
# Theta grids
# ---------------------------------------------------------------------------


def _h_min(fc: FamilyConfig, eps: float, cfg: ExperimentConfig) -> float:
    floor = cfg.h_floor_cells * cfg.spacing
    if fc.h_min == "eps2":
        return max(eps**2, floor)
    return max(float(_literal(fc.h_min)), floor)


def _h_max(fc: FamilyConfig, eps: float, cfg: ExperimentConfig) -> float:
    rule = fc.h_max
    if rule == "holder":
        if fc.alpha_max is None:
            raise ValueError(f"family {fc.name!r}: h_max = holder needs alpha_max")
        return eps ** (2.0 / (2.0 * fc.alpha_max + 1.0))
    if rule == "besov":
        p = cfg.function_params
        s, pp = float(p["s"]), float(p["p"])
        if besov_case(s, pp, cfg.r, cfg.d) == "dense":
            return eps ** (2.0 / (2.0 * s + cfg.d))
        return 0.5
    return float(_literal(rule))


def build_theta(fc: FamilyConfig, eps: float, cfg: ExperimentConfig) -> ThetaGrid:
    """Theta grid of one family at one noise level."""
    base = make_base_kernel(fc.profile, cfg.d, fc.order)
    hmin, hmax = _h_min(fc, eps, cfg), _h_max(fc, eps, cfg)
    hmin = min(hmin, hmax)
    if fc.family == "SI":
        return theta_single_index(base, hmin, hmax, angle_c=fc.angle_c, n_angles=fc.n_angles, n_h=fc.n_h)
    if fc.family == "BESOV":
        return theta_besov(base, hmin, hmax, n_h=fc.n_h)
    if fc.family == "AH":
        ll = math.sqrt(math.log(math.log(1.0 / eps)))
        g = float(fc.gamma)
        phi = (eps * ll) ** (2.0 * g / (2.0 * g + 1.0))
        return theta_aniso(base, g, phi, hmin, hmax, n_h=fc.n_h)
    if fc.family == "GENERAL":
        return theta_general(base, hmin, hmax, n_h=fc.n_h, n_angles=fc.n_angles, angle_c=fc.angle_c)
    return theta_mixed(base, hmin, hmax, n_h=fc.n_h, n_angles=fc.n_angles, angle_c=fc.angle_c)


def common_grid(thetas: Sequence[ThetaGrid], spacing: float, x_points: NDArray) -> Grid:
    """Grid over ``[-1/2, 1/2]^d`` padded for every grid's auxiliary kernels at every query node."""
    d = thetas[0].params[0].d
    margin = max(required_margin(t) for t in thetas)
    extent = max(0.5, float(np.max(np.abs(x_points))) if x_points.size else 0.5)
    half = extent + margin + 2.0 * spacing
    n = int(math.ceil(2.0 * half / spacing))
    n += 1 - n % 2
    return make_grid(d, n, (n * spacing - 1.0) / 2.0)


def experiment_grid(cfg: ExperimentConfig) -> Grid:
    """The observation grid shared by every family and noise level of ``cfg``."""
    thetas = [build_theta(fc, e, cfg) for fc in cfg.families for e in cfg.eps]
    return common_grid(thetas, cfg.spacing, cfg.x_points())


# ---------------------------------------------------------------------------
# Risk estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RiskReport:
    """Monte Carlo risks of one family over the eps grid."""

    family: str
    kind: str
    r: float
    eps: NDArray[np.float64]
    risk: NDArray[np.float64]
    se: NDArray[np.float64]
    oracle: NDArray[np.float64]
    theta_size: NDArray[np.int64]
    reps: int
    logfactor: str
    oracle_empty: NDArray[np.int64]
    fit: Optional[RateFit] = None
    meta: dict = field(default_factory=dict)

    @property
    def ratio(self) -> NDArray[np.float64]:
        return self.risk / self.oracle

    def with_fit(self, level: float = 0.95) -> "RiskReport":
        return replace(self, fit=fit_rate(self.eps, self.risk, self.logfactor, level))

    def oracle_stability(self) -> tuple[float, float]:
        """``(max ratio, max/min ratio)`` over the eps points with a defined oracle."""
        r = self.ratio[np.isfinite(self.ratio)]
        if r.size == 0:
            return math.nan, math.nan
        return float(np.max(r)), float(np.max(r) / np.min(r))


def rate_fit(report: RiskReport, level: float = 0.95) -> tuple[float, tuple[float, float]]:
    """Slope and confidence interval of a risk report."""
    fit = fit_rate(report.eps, report.risk, report.logfactor, level)
    return fit.slope, fit.ci


@dataclass
class _FamilyState:
    fc: FamilyConfig
    thetas: list[ThetaGrid]
    engines: dict
    tables: dict
    specs: list[MajorantSpec]
    q_vals: list[NDArray]


def _prepare(cfg: ExperimentConfig, e_reps: Optional[int] = None, tables: Optional[dict] = None):
    x_pts = cfg.x_points()
    thetas = {fc.name: [build_theta(fc, e, cfg) for e in cfg.eps] for fc in cfg.families}
    grid = common_grid([t for ts in thetas.values() for t in ts], cfg.spacing, x_pts)
    states = {}
    for fc in cfg.families:
        engines: dict[str, PairEngine] = {}
        etabs: dict[str, ETable] = {} if tables is None else tables.setdefault(fc.name, {})
        specs, qs = [], []
        for k, (eps, th) in enumerate(zip(cfg.eps, thetas[fc.name])):
            if th.ident not in engines:
                engines[th.ident] = PairEngine(th, grid)
            if th.ident not in etabs:
                n_e = fc.e_reps if e_reps is None else max(100, int(e_reps))
                etabs[th.ident] = e_mc(th, reps=n_e, seed=cfg.seed, engine=engines[th.ident])
            spec = build_majorant(fc.majorant, th, etabs[th.ident], r=cfg.r, eps=eps, e_source=fc.e_source)
            specs.append(spec)
            qs.append(spec.Q(th.sigma_tilde))
        states[fc.name] = _FamilyState(fc, thetas[fc.name], engines, etabs, specs, qs)
    return grid, x_pts, states


def _simulate(cfg: ExperimentConfig, F: TestFunction, grid: Grid, x_pts: NDArray, states: dict, trace_sink=None):
    """Errors ``err[family][k]`` with shape ``(reps, n_x)`` and selected indices."""
    truth = F(grid.points().reshape(-1, grid.d)).reshape(grid.shape)
    fx = np.array([float(F(grid.snap(x)[None])[0]) for x in x_pts])
    errs = {name: np.zeros((len(cfg.eps), cfg.reps, len(x_pts))) for name in states}
    picks = {name: np.zeros((len(cfg.eps), cfg.reps, len(x_pts)), dtype=np.int64) for name in states}
    for k, eps in enumerate(cfg.eps):
        for b in range(cfg.reps):
            try:
                fld = sample_field(F, eps, grid, cfg.seed, b, truth_values=truth)
                for name, st in states.items():
                    th = st.thetas[k]
                    eng = st.engines[th.ident]
                    for j, x in enumerate(x_pts):
                        res = select_from_table(eng.pair_table(fld, x), th, st.specs[k], eps, st.q_vals[k])
                        errs[name][k, b, j] = res.estimate - fx[j]
                        picks[name][k, b, j] = res.index
                        if trace_sink is not None and b < cfg.trace_samples and j == 0:
                            trace_sink(name, k, b, res)
            except Exception as exc:
                raise RuntimeError(
                    f"replication failed (seed={cfg.seed}, replication={b}, eps={eps!r}): {exc}"
                ) from exc
    return errs, picks


def _risk_from_errors(err: NDArray, r: float) -> tuple[float, float]:
    """Risk and delta-method s.e. from a ``(reps, n_x)`` error array (discrete L_r over nodes)."""
    per_rep = np.mean(np.abs(err) ** r, axis=1)
    m = float(np.mean(per_rep))
    se_m = float(np.std(per_rep, ddof=1) / math.sqrt(per_rep.size))
    risk = m ** (1.0 / r)
    se = se_m * risk ** (1.0 - r) / r if risk > 0 else 0.0
    return risk, se


def _oracles(cfg: ExperimentConfig, F, grid, x_pts, states):
    """Per family: list over eps of (aggregated oracle value, empty count, list of OracleReport)."""
    out = {}
    for name, st in states.items():
        rows = []
        for k, eps in enumerate(cfg.eps):
            th = st.thetas[k]
            eng = st.engines[th.ident]
            reports = []
            vals = []
            empty = 0
            for x in x_pts:
                if cfg.risk == "pointwise":
                    rep = oracle_report(F, th, eps, st.specs[k], x, grid, eng)
                    reports.append(rep)
                    star, bound = rep.mu_star, rep.bound
                else:
                    res = theta_F(F, th, eps, st.specs[k], x, grid, eng)
                    star = res.mu_star
                    bound = None if star is None else float(eps * st.specs[k].Q(th.sigma_tilde[star]))
                if star is None:
                    empty += 1
                else:
                    vals.append(bound)
            if vals and empty == 0:
                agg = float(np.mean(np.asarray(vals) ** cfg.r) ** (1.0 / cfg.r))
            else:
                agg = math.nan
            rows.append((agg, empty, reports))
        out[name] = rows
    return out


def _reports(cfg, errs, oracles, states) -> dict[str, RiskReport]:
    reports = {}
    for name, st in states.items():
        risk, se = zip(*(_risk_from_errors(errs[name][k], cfg.r) for k in range(len(cfg.eps))))
        rep = RiskReport(
            family=name,
            kind=cfg.risk,
            r=cfg.r,
            eps=np.asarray(cfg.eps),
            risk=np.asarray(risk),
            se=np.asarray(se),
            oracle=np.asarray([o[0] for o in oracles[name]]),
            theta_size=np.asarray([len(t) for t in st.thetas]),
            reps=cfg.reps,
            logfactor=cfg.logfactor,
            oracle_empty=np.asarray([o[1] for o in oracles[name]]),
        )
        if len(cfg.eps) >= 4 and np.all(rep.risk > 0) and np.ptp(np.log(rep.risk)) > 0:
            rep = rep.with_fit()
        reports[name] = rep
    return reports


def _run(cfg: ExperimentConfig, e_reps=None, trace_sink=None, tables=None):
    F = make_function(cfg.function, **cfg.function_params)
    grid, x_pts, states = _prepare(cfg, e_reps, tables)
    errs, picks = _simulate(cfg, F, grid, x_pts, states, trace_sink)
    oracles = _oracles(cfg, F, grid, x_pts, states)
    return F, grid, x_pts, states, errs, picks, oracles, _reports(cfg, errs, oracles, states)


def pointwise_risk(cfg: ExperimentConfig, e_reps: Optional[int] = None) -> dict[str, RiskReport]:
    """Pointwise ``R_r`` at ``cfg.x`` for every family of the config."""
    if cfg.risk != "pointwise":
        cfg = replace(cfg, risk="pointwise", x=cfg.x or (0.0,) * cfg.d)
    return _run(cfg, e_reps)[-1]


def global_risk(cfg: ExperimentConfig, e_reps: Optional[int] = None) -> dict[str, RiskReport]:
    """Discrete ``L_r`` risk over the ``x_nodes^d`` grid for every family of the config."""
    if cfg.risk != "global":
        cfg = replace(cfg, risk="global")
    return _run(cfg, e_reps)[-1]


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def _write_csv(path: Path, rows) -> Path:
    try:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _f(v) -> str:
    return repr(float(v))


def dry_run(cfg: ExperimentConfig) -> dict:
    """Validate the config and derive the Theta grid sizes without simulating."""
    x_pts = cfg.x_points()
    out = {"name": cfg.name, "eps": list(cfg.eps), "reps": cfg.reps, "risk": cfg.risk, "x_nodes": len(x_pts), "families": {}}
    thetas = []
    for fc in cfg.families:
        rows = []
        for e in cfg.eps:
            th = build_theta(fc, e, cfg)
            thetas.append(th)
            rows.append({"eps": e, "size": len(th), "h_min": th.h_min, "h_max": th.h_max, "levels": int(th.levels.size)})
        out["families"][fc.name] = rows
    g = common_grid(thetas, cfg.spacing, x_pts)
    out["grid"] = {"d": g.d, "n": g.n, "spacing": g.spacing, "margin": g.margin}
    make_function(cfg.function, **cfg.function_params)
    return out


def _versions() -> dict:
    import numba
    import scipy

    from . import __version__

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "ptselect": __version__,
        "backend": _accel.BACKEND,
    }


def run_experiment(
    cfg_or_path,
    out,
    seed: Optional[int] = None,
    reps: Optional[int] = None,
    e_reps: Optional[int] = None,
) -> Path:
    """Run an experiment and write its artifact directory.

    Files written: ``risk.csv``, ``fit.csv``, ``plot.csv``, ``etable_<family>_<k>.csv``,
    ``oracle_<family>.json``, ``traces/<family>_eps<k>_rep<b>.csv`` and
    ``provenance.json``.
    """
    cfg = cfg_or_path if isinstance(cfg_or_path, ExperimentConfig) else load_config(cfg_or_path)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if reps is not None:
        cfg = replace(cfg, reps=int(reps))
    out = Path(out)
    try:
        (out / "traces").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc

    def sink(name, k, b, res):
        res.write_trace_csv(out / "traces" / f"{name}_eps{k}_rep{b}.csv")

    F, grid, x_pts, states, errs, picks, oracles, reports = _run(cfg, e_reps, sink)

    risk_rows = [["family", "eps", "risk", "se", "oracle", "ratio", "theta_size", "oracle_empty_nodes"]]
    plot_rows = [["family", "eps", "log_x", "log_risk", "risk", "oracle", "fitted"]]
    fit_rows = [["family", "slope", "ci_low", "ci_high", "stderr", "intercept", "target", "logfactor"]]
    for name, rep in reports.items():
        for k in range(rep.eps.size):
            risk_rows.append([name, _f(rep.eps[k]), _f(rep.risk[k]), _f(rep.se[k]), _f(rep.oracle[k]),
                              _f(rep.ratio[k]), int(rep.theta_size[k]), int(rep.oracle_empty[k])])
        lx = np.log(rep.eps * logfactor(rep.logfactor, rep.eps))
        fitted = rep.fit.fitted() if rep.fit is not None else np.full(rep.eps.size, math.nan)
        for k in range(rep.eps.size):
            plot_rows.append([name, _f(rep.eps[k]), _f(lx[k]), _f(math.log(rep.risk[k])) if rep.risk[k] > 0 else "nan",
                              _f(rep.risk[k]), _f(rep.oracle[k]), _f(math.exp(fitted[k]))])
        if rep.fit is not None:
            fit_rows.append([name, _f(rep.fit.slope), _f(rep.fit.ci[0]), _f(rep.fit.ci[1]), _f(rep.fit.stderr),
                             _f(rep.fit.intercept), "" if cfg.target is None else _f(cfg.target), rep.logfactor])
    _write_csv(out / "risk.csv", risk_rows)
    _write_csv(out / "plot.csv", plot_rows)
    _write_csv(out / "fit.csv", fit_rows)

    maj = {}
    for name, st in states.items():
        idents = list(dict.fromkeys(t.ident for t in st.thetas))
        for j, ident in enumerate(idents):
            st.tables[ident].to_csv(out / f"etable_{name}_{j}.csv")
        maj[name] = [dict(st.specs[k].describe(), eps=cfg.eps[k], theta_id=st.thetas[k].ident) for k in range(len(cfg.eps))]
        if cfg.risk == "pointwise":
            payload = [o[2][0].to_dict() for o in oracles[name]]
        else:
            payload = [{"eps": cfg.eps[k], "oracle_L_r": oracles[name][k][0], "empty_nodes": oracles[name][k][1]}
                       for k in range(len(cfg.eps))]
        (out / f"oracle_{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")

    prov = {
        "config_name": cfg.name,
        "config_text": cfg.source,
        "seed": cfg.seed,
        "reps": cfg.reps,
        "e_reps_override": e_reps,
        "grid": {"d": grid.d, "n": grid.n, "margin": grid.margin, "spacing": grid.spacing},
        "x_nodes": len(x_pts),
        "function": {"id": cfg.function, "params": cfg.function_params, "tag": F.tag},
        "majorants": maj,
        "seed_scheme": "field noise: SeedSequence(seed, spawn_key=(replication, role)); same replication index at every eps",
        "versions": _versions(),
    }
    (out / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True, default=_json_default) + "\n")
    return out


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    return str(o)
