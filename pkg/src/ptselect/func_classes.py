"""Test functions with certified smoothness and a numerical membership verifier.

Generators:

* ``make_holder_1d``: cusp ``L |t - t0|^alpha`` (``alpha <= 1``) or a
  truncated cosine series whose coefficients are scaled so that the Hoelder
  conditions hold with constant ``L``.
* ``make_single_index``: ``F(t) = f(omega . t)``.
* ``make_aniso_holder``: ``F(t) = sum_i f_i(t_i)`` with ``f_i`` of smoothness
  ``alpha_i`` and constant ``L / d``.
* ``make_besov``: sum of dilated polynomial bumps with level amplitudes
  ``c 2^{-j (s - d/p)}``, shrunk until the verifier accepts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .wgn_sim import derive_rng

__all__ = [
    "TestFunction",
    "MembershipReport",
    "holder_floor",
    "make_constant",
    "make_holder_1d",
    "make_single_index",
    "make_aniso_holder",
    "make_besov",
    "verify_membership",
    "difference_coefficients",
    "iterated_difference",
    "make_function",
    "REGISTRY",
]


def holder_floor(alpha: float) -> int:
    """Largest integer strictly less than ``alpha``."""
    return int(math.ceil(alpha) - 1)


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Callable test function with its class tag and parameters.

    ``evaluator`` maps an ``(N, d)`` array to ``N`` values.  ``derivs`` (1-D
    only, optional) maps ``(u, m)`` to the ``m``-th derivative.
    """

    __test__ = False  # not a pytest class

    evaluator: Callable[[NDArray], NDArray]
    d: int
    tag: str
    params: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    derivs: Optional[Callable[[NDArray, int], NDArray]] = None

    def __call__(self, t) -> NDArray[np.float64]:
        t = np.asarray(t, dtype=np.float64)
        if self.d == 1 and (t.ndim <= 1):
            pts = t.reshape(-1, 1)
            lead = t.shape
        else:
            if t.shape[-1] != self.d:
                raise ValueError(f"expected points with {self.d} coordinates, got shape {t.shape}")
            pts = t.reshape(-1, self.d)
            lead = t.shape[:-1]
        return np.asarray(self.evaluator(pts), dtype=np.float64).reshape(lead)


def make_constant(c: float = 0.0, d: int = 1) -> TestFunction:
    return TestFunction(lambda p: np.full(p.shape[0], float(c)), d, f"constant({c})", {"c": c})


# ---------------------------------------------------------------------------
# 1-D Hoelder functions
# ---------------------------------------------------------------------------


def _trig_series(alpha: float, L: float, rng: np.random.Generator, n_terms: int = 3):
    m = holder_floor(alpha)
    beta = alpha - m
    freqs = rng.uniform(1.5 * math.pi, 4.0 * math.pi, size=n_terms)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=n_terms)
    raw = rng.uniform(0.5, 1.0, size=n_terms)
    # sufficient conditions: sum a k^j <= L for j <= m, and
    # sum a k^m * 2^{1-beta} k^beta <= L for the increment of the m-th derivative
    bounds = [float(np.sum(raw * freqs**j)) for j in range(1, m + 1)]
    bounds.append(float(np.sum(raw * freqs**m * 2.0 ** (1.0 - beta) * freqs**beta)))
    amps = raw * (L / max(bounds)) if L > 0 else raw * 0.0
    return amps, freqs, phases


def make_holder_1d(alpha: float, L: float, shape: str = "cusp", seed: int = 0, t0: float = 0.0) -> TestFunction:
    """Univariate member of the Hoelder ball with smoothness ``alpha`` and constant ``L``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive; got {alpha}")
    if L < 0:
        raise ValueError(f"L must be non-negative; got {L}")
    params = {"alpha": alpha, "L": L, "shape": shape, "seed": seed, "t0": t0}
    if shape == "cusp":
        if alpha > 1:
            raise ValueError("the cusp shape only supports alpha <= 1")

        def ev(p, a=alpha, L=L, t0=t0):
            return L * np.abs(p[:, 0] - t0) ** a

        def der(u, m, a=alpha, L=L, t0=t0):
            if m == 0:
                return L * np.abs(u - t0) ** a
            raise ValueError("cusp is not differentiable at t0")

        notes = {"bias_constant": "B <= ||G||_1 L h^alpha", "t0": t0}
        return TestFunction(ev, 1, f"holder_cusp(alpha={alpha},L={L})", params, notes, der)
    if shape == "trig":
        if alpha > 6:
            raise ValueError("the trig shape supports alpha <= 6")
        amps, freqs, phases = _trig_series(alpha, L, derive_rng(seed, 0, "function"))

        def ev(p, a=amps, k=freqs, ph=phases):
            u = p[:, 0][:, None]
            return np.sum(a * np.cos(k * u + ph), axis=1)

        def der(u, m, a=amps, k=freqs, ph=phases):
            u = np.asarray(u, dtype=np.float64)[..., None]
            return np.sum(a * k**m * np.cos(k * u + ph + m * math.pi / 2), axis=-1)

        params.update(amps=amps.tolist(), freqs=freqs.tolist(), phases=phases.tolist())
        return TestFunction(ev, 1, f"holder_trig(alpha={alpha},L={L})", params, {}, der)
    if shape == "cosine":
        if alpha > 2:
            raise ValueError("the cosine shape supports alpha <= 2")
        # |cos a - cos b| <= 2^{1-a}|a-b|^a and |sin a - sin b| <= 2^{2-a}|a-b|^{a-1}
        amp = L / (2.0 ** (1.0 - alpha) if alpha <= 1 else max(1.0, 2.0 ** (2.0 - alpha)))

        def ev(p, A=amp, t0=t0):
            return -A * np.cos(p[:, 0] - t0)

        def der(u, m, A=amp, t0=t0):
            return -A * np.cos(np.asarray(u, dtype=np.float64) - t0 + m * math.pi / 2)

        params["amplitude"] = amp
        notes = {"curvature_at_t0": amp}
        return TestFunction(ev, 1, f"holder_cosine(alpha={alpha},L={L})", params, notes, der)
    raise ValueError(f"unknown shape {shape!r}; expected 'cusp', 'trig' or 'cosine'")


def make_single_index(f: TestFunction, omega: Sequence[float]) -> TestFunction:
    """``F(t) = f(omega . t)`` for a unit direction ``omega``."""
    w = np.asarray(omega, dtype=np.float64)
    if f.d != 1:
        raise ValueError("single-index link must be univariate")
    if abs(float(np.linalg.norm(w)) - 1.0) > 1e-12:
        raise ValueError(f"omega must be a unit vector; |omega| = {np.linalg.norm(w)!r}")
    d = w.size

    def ev(p, w=w, f=f):
        return f.evaluator((p @ w)[:, None])

    params = dict(f.params)
    params["omega"] = w.tolist()
    return TestFunction(ev, d, f"single_index[{f.tag}]", params, dict(f.notes), None)


def make_aniso_holder(
    alpha_vec: Sequence[float],
    L: float,
    seed: int = 0,
    gamma: Optional[float] = None,
    shapes: Optional[Sequence[str]] = None,
) -> TestFunction:
    """``F(t) = sum_i f_i(t_i)`` with ``f_i`` of smoothness ``alpha_i`` and constant ``L / d``.

    Axes with ``alpha_i <= 1`` default to the cusp shape, others to the trig shape.
    """
    alpha = [float(a) for a in alpha_vec]
    if any(a <= 0 for a in alpha):
        raise ValueError("all alpha_i must be positive")
    d = len(alpha)
    if gamma is not None:
        implied = 1.0 / sum(1.0 / a for a in alpha)
        if abs(implied - gamma) > 1e-10 * max(1.0, gamma):
            raise ValueError(f"sum 1/alpha_i gives gamma = {implied}, not {gamma}")
    if shapes is None:
        shapes = ["cusp" if a <= 1 else "trig" for a in alpha]
    parts = [make_holder_1d(a, L / d, s, seed=seed * 31 + i) for i, (a, s) in enumerate(zip(alpha, shapes))]

    def ev(p, parts=parts):
        return sum(fi.evaluator(p[:, i : i + 1]) for i, fi in enumerate(parts))

    g = 1.0 / sum(1.0 / a for a in alpha)
    params = {"alpha": alpha, "L": L, "gamma": g, "shapes": list(shapes), "seed": seed}
    fn = TestFunction(ev, d, f"aniso_holder(alpha={alpha},L={L})", params, {})
    object.__setattr__(fn, "notes", {"parts": parts})
    return fn


# ---------------------------------------------------------------------------
# Besov-type functions
# ---------------------------------------------------------------------------


def _bump(u: NDArray) -> NDArray:
    """``(1 - |u|^2)^4`` on the unit ball (C^3)."""
    r2 = np.sum(u * u, axis=-1)
    return np.where(r2 < 1.0, (1.0 - r2) ** 4, 0.0)


def make_besov(
    s: float,
    p: float,
    L: float,
    d: int = 1,
    seed: int = 0,
    levels: int = 6,
    bumps_per_level: int = 1,
    resolution: int = 512,
    max_shrink: int = 30,
) -> TestFunction:
    """Multiscale bump function certified by the numerical Besov verifier.

    Level ``j`` carries ``bumps_per_level`` bumps of radius ``2^{-j-2}`` at
    seed-dependent centres in ``D0`` with amplitude ``c 2^{-j (s - d/p)}``.
    The constant ``c`` starts at ``L`` and shrinks until the verified
    functional is at most ``L``.
    """
    if not (p >= 1):
        raise ValueError(f"p must be >= 1; got {p}")
    if s <= d / p:
        raise ValueError(f"need s > d/p; got s = {s}, d/p = {d / p}")
    if L <= 0:
        raise ValueError("L must be positive")
    rng = derive_rng(seed, 0, "function")
    centres, radii, amps = [], [], []
    for j in range(levels):
        for _ in range(bumps_per_level):
            centres.append(rng.uniform(-0.4, 0.4, size=d))
            radii.append(2.0 ** (-j - 2))
            amps.append(2.0 ** (-j * (s - d / p)))
    centres_a = np.array(centres)
    radii_a = np.array(radii)
    amps_a = np.array(amps)

    def shape_fn(pts):
        out = np.zeros(pts.shape[0])
        for c, r, a in zip(centres_a, radii_a, amps_a):
            out += a * _bump((pts - c) / r)
        return out

    spec = ("besov", s, p, L)
    probe = TestFunction(shape_fn, d, "besov-probe")
    base = verify_membership(probe, spec, resolution).constant
    if base <= 0:
        raise ValueError("degenerate Besov construction")
    c = L / base
    for _ in range(max_shrink):
        fn = TestFunction(
            lambda pts, c=c: c * shape_fn(pts),
            d,
            f"besov(s={s},p={p},L={L})",
            {"s": s, "p": p, "L": L, "seed": seed, "levels": levels, "scale": c},
        )
        rep = verify_membership(fn, spec, resolution)
        if rep.constant <= L:
            return fn
        c *= 0.98 * L / rep.constant
    raise ValueError("Besov construction failed to verify after the maximum number of shrink steps")


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


def difference_coefficients(order: int) -> NDArray[np.float64]:
    """Coefficients ``C(l, j) (-1)^{j + l}`` of ``Delta_a^l F(x) = sum_j c_j F(x + j a)``."""
    return np.array([math.comb(order, j) * (-1.0) ** (j + order) for j in range(order + 1)])


def iterated_difference(F: Callable, x: NDArray, a: NDArray, order: int) -> NDArray[np.float64]:
    """``Delta_a^order F`` at points ``x`` (shape ``(N, d)``) for shift ``a``."""
    coef = difference_coefficients(order)
    return sum(c * np.asarray(F(x + j * a)) for j, c in enumerate(coef))


@dataclass(frozen=True)
class MembershipReport:
    constant: float
    L: float
    passed: bool
    details: dict = field(default_factory=dict)


def _shifts(resolution: int) -> NDArray[np.float64]:
    dx = 1.0 / resolution
    return np.geomspace(2.0 * dx, 0.25, 24)


def _holder_line(g: Callable[[NDArray], NDArray], alpha: float, u: NDArray, shifts: NDArray, derivs=None) -> dict:
    """Hoelder functional of a univariate function sampled along ``u``."""
    m = holder_floor(alpha)
    beta = alpha - m
    eta = 1e-4

    def deriv(v, k):
        if k == 0:
            return g(v)
        if derivs is not None:
            return derivs(v, k)
        coef = difference_coefficients(k)
        return sum(c * g(v + (j - k / 2.0) * eta) for j, c in enumerate(coef)) / eta**k

    out = {}
    sups = [float(np.max(np.abs(deriv(u, k)))) for k in range(1, m + 1)]
    out["derivative_sups"] = sups
    base = deriv(u, m)
    worst = 0.0
    for z in shifts:
        for sgn in (1.0, -1.0):
            inc = np.abs(deriv(u + sgn * z, m) - base) / z**beta
            worst = max(worst, float(np.max(inc)))
    out["increment"] = worst
    out["constant"] = max(sups + [worst])
    return out


def verify_membership(F: TestFunction, class_spec: tuple, resolution: int = 256, slack: float = 0.05) -> MembershipReport:
    """Empirical class constant on a probe grid over ``D0``.

    ``class_spec`` is one of ``("holder", alpha, L)`` (1-D),
    ``("aniso", alpha_vec, L)``, ``("single_index", alpha, L, omega)`` or
    ``("besov", s, p, L)``.  The report passes when the constant is at most
    ``L (1 + slack)``.
    """
    if resolution < 128:
        raise ValueError("probe resolution must be at least 128 nodes per axis")
    kind = class_spec[0]
    shifts = _shifts(resolution)
    ax = np.linspace(-0.5, 0.5, resolution + 1)
    if kind == "holder":
        _, alpha, L = class_spec
        info = _holder_line(lambda v: F(v), alpha, ax, shifts, F.derivs)
        const = info["constant"]
    elif kind == "single_index":
        _, alpha, L, omega = class_spec
        w = np.asarray(omega, dtype=np.float64)
        info = _holder_line(lambda v: F(np.outer(v, w)), alpha, ax * math.sqrt(F.d) / 1.0, shifts)
        const = info["constant"]
    elif kind == "aniso":
        _, alpha_vec, L = class_spec
        d = F.d
        coarse = np.linspace(-0.5, 0.5, 17)
        consts = []
        for i, a in enumerate(alpha_vec):
            worst = 0.0
            others = [coarse] * (d - 1)
            for rest in np.array(np.meshgrid(*others, indexing="ij")).reshape(d - 1, -1).T if d > 1 else [np.zeros(0)]:
                def line(v, rest=rest, i=i):
                    pts = np.empty((np.size(v), d))
                    pts[:, i] = v
                    pts[:, [k for k in range(d) if k != i]] = rest
                    return F(pts)

                worst = max(worst, _holder_line(line, a, ax, shifts)["constant"])
            consts.append(worst)
        info = {"per_axis": consts}
        const = max(consts)
    elif kind == "besov":
        _, s, p, L = class_spec
        d = F.d
        order = holder_floor(s) + 2
        grid1 = np.linspace(-0.5, 0.5, resolution + 1) if d == 1 else np.linspace(-0.5, 0.5, min(resolution, 160) + 1)
        pts = np.stack(np.meshgrid(*([grid1] * d), indexing="ij"), axis=-1).reshape(-1, d)
        wts = np.full(pts.shape[0], (grid1[1] - grid1[0]) ** d)
        if d == 1:
            dirs = np.array([[1.0], [-1.0]])
        else:
            angs = np.arange(8) * (math.pi / 4)
            dirs = np.stack([np.cos(angs), np.sin(angs)] + [np.zeros(8)] * (d - 2), axis=1)
        worst = 0.0
        for r in shifts:
            for v in dirs:
                a = r * v
                diff = iterated_difference(F, pts, a, order)
                norm = float(np.sum(np.abs(diff) ** p * wts) ** (1.0 / p))
                worst = max(worst, norm / r**s)
        info = {"order": order}
        const = worst
    else:
        raise ValueError(f"unknown class spec {kind!r}")
    return MembershipReport(float(const), float(L), bool(const <= L * (1.0 + slack)), info)


# ---------------------------------------------------------------------------
# Registry addressable from experiment configs
# ---------------------------------------------------------------------------


def _reg_single_index(d=2, alpha=1.0, L=1.0, shape="cusp", omega_angle=math.pi / 6, seed=0, t0=0.0, **_):
    f = make_holder_1d(alpha, L, shape, seed, t0)
    if d == 1:
        return f
    w = np.zeros(d)
    w[0], w[1] = math.cos(omega_angle), math.sin(omega_angle)
    return make_single_index(f, w)


def _reg_holder(d=1, alpha=1.0, L=1.0, shape="cusp", seed=0, t0=0.0, **_):
    return make_holder_1d(alpha, L, shape, seed, t0)


def _reg_aniso(d=2, alpha=(1.0, 2.0), L=1.0, seed=0, shapes=None, **_):
    return make_aniso_holder(alpha, L, seed, shapes=shapes)


def _reg_besov(d=1, s=1.0, p=2.0, L=1.0, seed=0, levels=6, bumps_per_level=1, **_):
    return make_besov(s, p, L, d=d, seed=seed, levels=int(levels), bumps_per_level=int(bumps_per_level))


def _reg_constant(d=1, c=0.0, **_):
    return make_constant(c, d)


REGISTRY: dict[str, Callable[..., TestFunction]] = {
    "holder": _reg_holder,
    "single_index": _reg_single_index,
    "aniso_holder": _reg_aniso,
    "besov": _reg_besov,
    "constant": _reg_constant,
}


def make_function(ident: str, **params) -> TestFunction:
    """Build a registered test function by id."""
    try:
        factory = REGISTRY[ident]
    except KeyError:
        raise ValueError(f"unknown function id {ident!r}; expected one of {sorted(REGISTRY)}") from None
    return factory(**params)
