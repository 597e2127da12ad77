"""Base kernels, kernel families and their discretizations.

A base kernel ``G`` on ``[-1/2, 1/2]^d`` is built from a polynomial 1-D profile
``g0`` on ``[-1, 1]``.  For vanishing-moment order ``l`` we use ``k = l + 1``
dilated copies,

    G(t) = sum_{j=1}^{k} (-1)^{j+1} C(k, j) j^{-d} g(t / j),
    g(t) = prod_i 2k * g0(2k * t_i),

so ``G`` is a sum of ``k`` separable terms.  Family members are
``K_mu(t, x) = prod(h)^{-1} G(E^T (t - x) / h)``.
"""

from __future__ import annotations

import functools
import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from numpy.typing import NDArray
from scipy import signal

from . import _accel

__all__ = [
    "FAMILIES",
    "PROFILES",
    "KernelConstructionError",
    "Profile1D",
    "BaseKernel",
    "KernelParam",
    "ThetaGrid",
    "Stencil",
    "AuxKernel",
    "get_profile",
    "make_base_kernel",
    "validate_moments",
    "eval_kernel",
    "kernel_norms",
    "sigma_tilde",
    "rotation",
    "tabulate",
    "convolve_kernels",
    "geometric_bandwidths",
    "angle_grid",
    "theta_general",
    "theta_single_index",
    "theta_aniso",
    "theta_besov",
    "theta_mixed",
    "theta_from_params",
]

FAMILIES = ("GENERAL", "SI", "AH", "BESOV", "MIXED")


class KernelConstructionError(ValueError):
    """Raised when a kernel fails its moment or support checks."""

    def __init__(self, message: str, multi_index: Optional[tuple[int, ...]] = None):
        super().__init__(message)
        self.multi_index = multi_index


# ---------------------------------------------------------------------------
# 1-D polynomial profiles on [-1, 1]
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Profile1D:
    """Piecewise polynomial density on ``[-1, 1]`` (integrates to one)."""

    name: str
    breaks: NDArray[np.float64]
    pieces: tuple[Polynomial, ...]

    @functools.cached_property
    def coefs(self) -> NDArray[np.float64]:
        deg = max(p.degree() for p in self.pieces)
        out = np.zeros((len(self.pieces), deg + 1))
        for i, p in enumerate(self.pieces):
            out[i, : p.coef.size] = p.coef
        return out

    @functools.cached_property
    def _antider(self):
        ants = [p.integ() for p in self.pieces]
        cum = [0.0]
        for p, a in zip(range(len(ants)), ants):
            lo, hi = self.breaks[p], self.breaks[p + 1]
            cum.append(cum[-1] + a(hi) - a(lo))
        return ants, np.array(cum)

    def _piece_index(self, u: NDArray) -> NDArray:
        return np.clip(np.searchsorted(self.breaks, u, side="right") - 1, 0, len(self.pieces) - 1)

    def value(self, u) -> NDArray[np.float64]:
        u = np.asarray(u, dtype=np.float64)
        out = np.zeros_like(u)
        inside = np.abs(u) <= 1.0
        idx = self._piece_index(u)
        for p, poly in enumerate(self.pieces):
            m = inside & (idx == p)
            if np.any(m):
                out[m] = poly(u[m])
        return out

    def deriv(self, u) -> NDArray[np.float64]:
        u = np.asarray(u, dtype=np.float64)
        out = np.zeros_like(u)
        inside = np.abs(u) <= 1.0
        idx = self._piece_index(u)
        for p, poly in enumerate(self.pieces):
            m = inside & (idx == p)
            if np.any(m):
                out[m] = poly.deriv()(u[m])
        return out

    def cdf(self, u) -> NDArray[np.float64]:
        """Integral of the profile from -1 to ``u``."""
        u = np.clip(np.asarray(u, dtype=np.float64), -1.0, 1.0)
        ants, cum = self._antider
        idx = self._piece_index(u)
        out = np.empty_like(u)
        for p, a in enumerate(ants):
            m = idx == p
            if np.any(m):
                out[m] = cum[p] + a(u[m]) - a(self.breaks[p])
        return out

    @property
    def degree(self) -> int:
        return self.coefs.shape[1] - 1


def _build_profiles() -> dict[str, Profile1D]:
    u2 = Polynomial([1.0, 0.0, -1.0])  # 1 - u^2
    quartic = Profile1D("quartic", np.array([-1.0, 1.0]), ((15.0 / 16.0) * u2**2,))
    triweight = Profile1D("triweight", np.array([-1.0, 1.0]), ((35.0 / 32.0) * u2**3,))
    # flat top on |u| <= 1/2 with a C^1 smoothstep taper S(z) = 3z^2 - 2z^3
    c = 2.0 / 3.0
    smooth = Polynomial([0.0, 0.0, 3.0, -2.0])
    left = c * (1.0 - smooth(Polynomial([-1.0, -2.0])))
    right = c * (1.0 - smooth(Polynomial([-1.0, 2.0])))
    box = Profile1D(
        "box-smooth",
        np.array([-1.0, -0.5, 0.5, 1.0]),
        (left, Polynomial([c]), right),
    )
    return {p.name: p for p in (quartic, triweight, box)}


PROFILES: dict[str, Profile1D] = _build_profiles()


def get_profile(name: str) -> Profile1D:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}") from None


def _gl_panels(breaks: Sequence[float], nodes: int, sub: int = 1) -> tuple[NDArray, NDArray]:
    """Composite Gauss-Legendre rule over consecutive break intervals."""
    x0, w0 = np.polynomial.legendre.leggauss(nodes)
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        edges = np.linspace(a, b, sub + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            half = 0.5 * (hi - lo)
            xs.append(0.5 * (hi + lo) + half * x0)
            ws.append(half * w0)
    return np.concatenate(xs), np.concatenate(ws)


# ---------------------------------------------------------------------------
# Base kernels
# ---------------------------------------------------------------------------


def _multi_indices(d: int, max_order: int) -> list[tuple[int, ...]]:
    out = []
    for tot in range(max_order + 1):
        for r in itertools.product(range(tot + 1), repeat=d):
            if sum(r) == tot:
                out.append(r)
    return out


@dataclass(frozen=True, eq=False)
class BaseKernel:
    """Higher-order product-sum kernel on ``[-1/2, 1/2]^d``.

    Attributes:
        profile: 1-D profile the kernel is built from.
        d: dimension.
        order: number of vanishing moments ``l``.
        norm_l1: ``||G||_1``.
        norm_l2: ``||G||_2``.
        grad_bound: ``M`` with ``|grad G| <= M``.
    """

    profile: Profile1D
    d: int
    order: int
    support_radius: float = 0.5

    @functools.cached_property
    def norm_l1(self) -> float:
        return _norm_l1(self)

    @functools.cached_property
    def norm_l2(self) -> float:
        return _norm_l2(self)

    @functools.cached_property
    def grad_bound(self) -> float:
        return _grad_bound(self)

    @property
    def n_terms(self) -> int:
        return self.order + 1

    @property
    def coefficients(self) -> NDArray[np.float64]:
        """``(-1)^{j+1} C(k, j) / j^d`` for ``j = 1..k``."""
        k = self.n_terms
        return np.array([(-1.0) ** (j + 1) * math.comb(k, j) / j**self.d for j in range(1, k + 1)])

    @property
    def _signed_binom(self) -> NDArray[np.float64]:
        k = self.n_terms
        return np.array([(-1.0) ** (j + 1) * math.comb(k, j) for j in range(1, k + 1)])

    @property
    def dilations(self) -> NDArray[np.float64]:
        """Argument scale of ``g0`` inside term ``j``: ``2k / j``."""
        k = self.n_terms
        return np.array([2.0 * k / j for j in range(1, k + 1)])

    @property
    def amplitudes(self) -> NDArray[np.float64]:
        """Term weights when each term is written as ``prod_i g0(dil_j t_i)``."""
        return self._signed_binom * self.dilations**self.d

    def factor(self, j: int, u) -> NDArray[np.float64]:
        """1-D factor of term ``j`` (1-based): ``(2k/j) g0(2k u / j)``."""
        s = 2.0 * self.n_terms / j
        return s * self.profile.value(s * np.asarray(u, dtype=np.float64))

    def factor_deriv(self, j: int, u) -> NDArray[np.float64]:
        s = 2.0 * self.n_terms / j
        return s * s * self.profile.deriv(s * np.asarray(u, dtype=np.float64))

    def factor_cdf(self, j: int, u) -> NDArray[np.float64]:
        s = 2.0 * self.n_terms / j
        return self.profile.cdf(s * np.asarray(u, dtype=np.float64))

    def breakpoints(self) -> NDArray[np.float64]:
        """Union of the 1-D break points of all term factors."""
        k = self.n_terms
        pts = {float(b * j / (2 * k)) for b in self.profile.breaks for j in range(1, k + 1)}
        return np.array(sorted(pts))

    def __call__(self, t) -> NDArray[np.float64]:
        """Evaluate ``G`` at points ``t`` of shape ``(..., d)``."""
        t = np.asarray(t, dtype=np.float64)
        if self.d == 1 and (t.ndim == 0 or t.shape[-1] != 1):
            t = t[..., None]
        lead = t.shape[:-1]
        flat = t.reshape(-1, self.d)
        out = np.zeros(flat.shape[0])
        for j, c in enumerate(self._signed_binom, start=1):
            prod = np.full(flat.shape[0], c)
            for i in range(self.d):
                prod *= self.factor(j, flat[:, i])
            out += prod
        return out.reshape(lead)

    def gradient(self, t) -> NDArray[np.float64]:
        t = np.asarray(t, dtype=np.float64).reshape(-1, self.d)
        grad = np.zeros_like(t)
        for j, c in enumerate(self._signed_binom, start=1):
            vals = [self.factor(j, t[:, i]) for i in range(self.d)]
            ders = [self.factor_deriv(j, t[:, i]) for i in range(self.d)]
            for i in range(self.d):
                prod = c * ders[i]
                for i2 in range(self.d):
                    if i2 != i:
                        prod = prod * vals[i2]
                grad[:, i] += prod
        return grad

    def moments(self, max_order: Optional[int] = None) -> dict[tuple[int, ...], float]:
        """Exact moments via the separable structure (1-D Gauss-Legendre, exact for polynomials)."""
        max_order = self.order if max_order is None else max_order
        x, w = _gl_panels(self.breakpoints(), nodes=self.profile.degree // 2 + max_order + 2)
        one_d = {}
        for j in range(1, self.n_terms + 1):
            f = self.factor(j, x)
            for r in range(max_order + 1):
                one_d[j, r] = float(np.sum(w * f * x**r))
        out = {}
        for r in _multi_indices(self.d, max_order):
            tot = 0.0
            for j, c in enumerate(self._signed_binom, start=1):
                tot += c * math.prod(one_d[j, ri] for ri in r)
            out[r] = tot
        return out


def validate_moments(
    evaluator: Callable[[NDArray], NDArray],
    d: int,
    order: int,
    breakpoints: Optional[Sequence[float]] = None,
    nodes: int = 8,
    mass_tol: float = 1e-8,
    moment_tol: float = 1e-6,
) -> dict[tuple[int, ...], float]:
    """Tensor Gauss-Legendre check of the moment conditions on ``[-1/2, 1/2]^d``.

    Returns the computed moments; raises :class:`KernelConstructionError`
    naming the first offending multi-index.
    """
    brk = np.array([-0.5, 0.5]) if breakpoints is None else np.asarray(breakpoints, dtype=np.float64)
    x, w = _gl_panels(brk, nodes=nodes)
    mesh = np.meshgrid(*([x] * d), indexing="ij")
    pts = np.stack(mesh, axis=-1).reshape(-1, d)
    wt = functools.reduce(np.multiply.outer, [w] * d).reshape(-1)
    vals = np.asarray(evaluator(pts)).reshape(-1) * wt
    out = {}
    for r in _multi_indices(d, order):
        mono = np.prod(pts ** np.array(r), axis=1)
        out[r] = float(np.sum(vals * mono))
        target = 1.0 if sum(r) == 0 else 0.0
        tol = mass_tol if sum(r) == 0 else moment_tol
        if abs(out[r] - target) > tol:
            raise KernelConstructionError(
                f"moment {r} equals {out[r]:.3e}, expected {target} (tolerance {tol:g})", multi_index=r
            )
    return out


def _norm_l2(kern: BaseKernel) -> float:
    x, w = _gl_panels(kern.breakpoints(), nodes=kern.profile.degree + 2)
    k = kern.n_terms
    c = kern._signed_binom
    f = [kern.factor(j, x) for j in range(1, k + 1)]
    tot = 0.0
    for a in range(k):
        for b in range(k):
            tot += c[a] * c[b] * float(np.sum(w * f[a] * f[b])) ** kern.d
    return math.sqrt(tot)


def _norm_l1(kern: BaseKernel) -> float:
    if kern.order == 0:
        return 1.0  # non-negative profile with unit mass
    brk = kern.breakpoints()
    deg = kern.profile.degree
    if kern.d == 1:
        # piecewise polynomial: split at sign changes, integrate each piece exactly
        tot = 0.0
        for a, b in zip(brk[:-1], brk[1:]):
            xs = np.linspace(a, b, deg + 3)
            poly = Polynomial.fit(xs, kern(xs), deg)
            roots = [r.real for r in poly.roots() if abs(r.imag) < 1e-12 and a < r.real < b]
            edges = np.array([a, *sorted(roots), b])
            x, w = _gl_panels(edges, nodes=deg // 2 + 2)
            tot += float(np.sum(w * np.abs(poly(x))))
        return tot
    sub = {2: 10, 3: 1}[kern.d]
    x, w = _gl_panels(brk, nodes=8, sub=sub)
    k = kern.n_terms
    c = kern._signed_binom
    f = [kern.factor(j, x) for j in range(1, k + 1)]
    if kern.d == 2:
        tot = 0.0
        for start in range(0, x.size, 512):
            sl = slice(start, start + 512)
            blk = sum(c[j] * np.multiply.outer(f[j][sl], f[j]) for j in range(k))
            tot += float(np.sum(np.abs(blk) * np.multiply.outer(w[sl], w)))
        return tot
    tot = 0.0
    ww = np.multiply.outer(w, w)
    for a in range(x.size):
        blk = sum(c[j] * f[j][a] * np.multiply.outer(f[j], f[j]) for j in range(k))
        tot += w[a] * float(np.sum(np.abs(blk) * ww))
    return tot


def _grad_bound(kern: BaseKernel) -> float:
    npts = {1: 100_001, 2: 1_001, 3: 161}[kern.d]
    ax = np.linspace(-0.5, 0.5, npts)
    if kern.d == 1:
        g = np.abs(kern.gradient(ax[:, None]))[:, 0]
        return 1.001 * float(g.max())
    mesh = np.stack(np.meshgrid(*([ax] * kern.d), indexing="ij"), axis=-1).reshape(-1, kern.d)
    best = 0.0
    for start in range(0, mesh.shape[0], 200_000):
        g = kern.gradient(mesh[start : start + 200_000])
        best = max(best, float(np.sqrt((g * g).sum(axis=1)).max()))
    return 1.001 * best


@functools.lru_cache(maxsize=None)
def make_base_kernel(profile: str, d: int, order: int = 0) -> BaseKernel:
    """Build (and cache) the base kernel of the given profile, dimension and order."""
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3; got {d}")
    if int(order) != order or order < 0:
        raise ValueError(f"order must be a non-negative integer; got {order}")
    prof = get_profile(profile)
    kern = BaseKernel(prof, int(d), int(order))
    mom = kern.moments()
    for r, val in mom.items():
        target = 1.0 if sum(r) == 0 else 0.0
        tol = 1e-8 if sum(r) == 0 else 1e-6
        if abs(val - target) > tol:
            raise KernelConstructionError(f"moment {r} of {profile} kernel is {val:.3e}", multi_index=r)
    return kern


# ---------------------------------------------------------------------------
# Family members
# ---------------------------------------------------------------------------


def rotation(angle: float) -> NDArray[np.float64]:
    """Planar rotation whose first column is ``(cos angle, sin angle)``."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class KernelParam:
    """One index ``mu = (h, E)`` of a kernel family."""

    family: str
    h: tuple[float, ...]
    angle: float
    base: BaseKernel

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        h = tuple(float(v) for v in self.h)
        object.__setattr__(self, "h", h)
        if len(h) != self.base.d:
            raise ValueError(f"bandwidth vector has {len(h)} entries for d = {self.base.d}")
        if any(not (v > 0 and math.isfinite(v)) for v in h):
            raise ValueError(f"bandwidths must be positive and finite; got {h}")
        if self.base.d != 2 and self.angle != 0.0:
            raise ValueError("rotations are only supported in d = 2")
        if not (0.0 <= self.angle < math.pi):
            raise ValueError(f"angle must lie in [0, pi); got {self.angle}")
        if self.family in ("AH", "BESOV") and self.angle != 0.0:
            raise ValueError(f"{self.family} kernels use E = I")

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def E(self) -> NDArray[np.float64]:
        if self.d == 2:
            return rotation(self.angle)
        return np.eye(self.d)

    @property
    def sigma(self) -> float:
        """``sigma_mu = ||G||_2 prod(h)^{-1/2}``."""
        return self.base.norm_l2 / math.sqrt(math.prod(self.h))

    @property
    def sigma_tilde(self) -> float:
        return self.base.norm_l1 * self.sigma

    @property
    def reach(self) -> NDArray[np.float64]:
        """Half-widths of the axis-aligned box containing ``supp K_mu(., 0)``."""
        h = np.asarray(self.h)
        return 0.5 * np.abs(self.E) @ h

    def sort_key(self) -> tuple:
        return (self.sigma_tilde, self.h, self.angle)

    def label(self) -> str:
        hs = ",".join(f"{v:.6g}" for v in self.h)
        return f"{self.family}[h=({hs}),angle={self.angle:.6g}]"


def eval_kernel(mu: KernelParam, t, x) -> NDArray[np.float64]:
    """``K_mu(t, x) = prod(h)^{-1} G(E^T (t - x) / h)`` for points ``t`` of shape ``(..., d)``."""
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    d = mu.d
    if d == 1 and (t.ndim == 0 or t.shape[-1] != 1):
        t = t[..., None]
    diff = t - x.reshape((1,) * (t.ndim - 1) + (d,))
    s = (diff @ mu.E) / np.asarray(mu.h)
    return mu.base(s) / math.prod(mu.h)


def kernel_norms(mu: KernelParam, grid=None, x=None) -> tuple[float, float]:
    """``(||K_mu(., x)||_1, sigma_mu)``.

    With ``grid`` given, both are computed by cell sums of point evaluations at
    the grid nodes instead of the closed forms.
    """
    if grid is None:
        return mu.base.norm_l1, mu.sigma
    x = np.zeros(mu.d) if x is None else grid.snap(x)
    vals = eval_kernel(mu, grid.points(), x)
    vol = grid.cell_volume
    return float(np.sum(np.abs(vals)) * vol), float(math.sqrt(np.sum(vals * vals) * vol))


def sigma_tilde(mu: KernelParam, theta: "ThetaGrid", grid=None) -> float:
    """Integrated standard deviation ``sigma~_mu``.

    Closed form ``||G||_1 sigma_mu`` by default.  With ``grid`` the general
    definition ``max(sup_nu int |K_nu| sigma_mu, sigma_mu)`` is evaluated by
    cell sums (``sigma_mu(y)`` does not depend on ``y`` for convolution kernels).
    """
    if mu not in theta.index_of:
        raise ValueError(f"{mu.label()} is not a member of the grid")
    if grid is None:
        return mu.sigma_tilde
    _, s_mu = kernel_norms(mu, grid)
    sup_l1 = max(kernel_norms(nu, grid)[0] for nu in theta.params)
    return max(sup_l1 * s_mu, s_mu)


# ---------------------------------------------------------------------------
# Grids over Theta
# ---------------------------------------------------------------------------


def _group_levels(values: NDArray, rtol: float = 1e-9) -> tuple[NDArray, NDArray]:
    order = np.argsort(values, kind="stable")
    levels: list[float] = []
    index = np.empty(values.size, dtype=np.int64)
    for i in order:
        v = values[i]
        if levels and abs(v - levels[-1]) <= rtol * max(abs(v), abs(levels[-1])):
            index[i] = len(levels) - 1
        else:
            levels.append(float(v))
            index[i] = len(levels) - 1
    return np.array(levels), index


@dataclass(frozen=True, eq=False)
class ThetaGrid:
    """Finite discretization of the index set with precomputed variance levels."""

    family: str
    params: tuple[KernelParam, ...]
    h_min: float
    h_max: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.params:
            raise ValueError("Theta grid is empty")
        for mu in self.params:
            if mu.family != self.family:
                raise ValueError(f"{mu.label()} does not belong to family {self.family}")
            if min(mu.h) < self.h_min * (1 - 1e-12) or max(mu.h) > self.h_max * (1 + 1e-12):
                raise ValueError(f"{mu.label()} has bandwidths outside [{self.h_min}, {self.h_max}]")
        _check_family(self)

    @functools.cached_property
    def sigma_tilde(self) -> NDArray[np.float64]:
        return np.array([mu.sigma_tilde for mu in self.params])

    @functools.cached_property
    def _levels(self):
        return _group_levels(self.sigma_tilde)

    @property
    def levels(self) -> NDArray[np.float64]:
        """Sorted distinct values of sigma~ over the grid."""
        return self._levels[0]

    @property
    def level_index(self) -> NDArray[np.int64]:
        return self._levels[1]

    @property
    def sigma_min(self) -> float:
        return float(self.sigma_tilde.min())

    @property
    def sigma_max(self) -> float:
        return float(self.sigma_tilde.max())

    @property
    def M_KTheta(self) -> float:
        return max(mu.base.norm_l1 for mu in self.params)

    @property
    def sigma_KTheta(self) -> float:
        return max(mu.sigma for mu in self.params)

    @functools.cached_property
    def index_of(self) -> dict[KernelParam, int]:
        return {mu: i for i, mu in enumerate(self.params)}

    @functools.cached_property
    def sort_order(self) -> NDArray[np.int64]:
        """Members ordered by the deterministic tie-break key (sigma~, h, angle)."""
        keys = [mu.sort_key() for mu in self.params]
        return np.array(sorted(range(len(keys)), key=lambda i: keys[i]), dtype=np.int64)

    @functools.cached_property
    def rank(self) -> NDArray[np.int64]:
        r = np.empty(len(self.params), dtype=np.int64)
        r[self.sort_order] = np.arange(len(self.params))
        return r

    def __len__(self) -> int:
        return len(self.params)

    @functools.cached_property
    def ident(self) -> str:
        """Stable short hash identifying the grid contents."""
        h = hashlib.sha256()
        base = self.params[0].base
        h.update(f"{self.family}|{base.profile.name}|{base.d}|{base.order}".encode())
        for mu in self.params:
            h.update(repr((mu.h, mu.angle)).encode())
        return h.hexdigest()[:12]


def _check_family(theta: ThetaGrid) -> None:
    fam = theta.family
    for mu in theta.params:
        if fam == "SI" and any(abs(v - theta.h_max) > 1e-12 * theta.h_max for v in mu.h[1:]):
            raise ValueError(f"single-index member {mu.label()} must have h_2..h_d = h_max")
        if fam == "BESOV" and max(mu.h) - min(mu.h) > 1e-12 * max(mu.h):
            raise ValueError(f"Besov member {mu.label()} must be isotropic")
        if fam == "AH":
            gamma = theta.meta.get("gamma")
            phi = theta.meta.get("phi")
            if gamma is None or phi is None:
                raise ValueError("AH grid requires meta entries 'gamma' and 'phi'")
            val = math.prod(v**gamma for v in mu.h)
            if abs(val - phi) > 1e-10 * max(1.0, phi):
                raise ValueError(f"AH member {mu.label()} violates prod h^gamma = phi")


def geometric_bandwidths(h_min: float, h_max: float, exponent: float, ratio: float = 2.0**0.25, count=None):
    """Geometric grid from ``h_max`` down to ``h_min`` (both included).

    The number of points is the smallest one for which consecutive values of
    ``h^{-exponent}`` differ by a factor of at most ``ratio``, unless ``count``
    is given.
    """
    if not (0 < h_min <= h_max):
        raise ValueError(f"need 0 < h_min <= h_max; got {h_min}, {h_max}")
    if h_min == h_max:
        return np.array([h_max])
    if count is None:
        steps = math.ceil(exponent * math.log(h_max / h_min) / math.log(ratio) - 1e-12)
        count = max(steps, 1) + 1
    vals = h_max * (h_min / h_max) ** (np.arange(count) / (count - 1))
    vals[0], vals[-1] = h_max, h_min
    return vals


def angle_grid(h_min: float, c: float = 0.25, cap: int = 64, count=None) -> NDArray[np.float64]:
    """Uniform angles ``k pi / N`` on ``[0, pi)`` with ``N = ceil(pi c / h_min)`` capped."""
    if count is None:
        count = min(cap, max(1, math.ceil(math.pi * c / h_min)))
    return np.arange(count) * (math.pi / count)


def theta_single_index(base, h_min, h_max, angle_c=0.25, n_angles=None, n_h=None) -> ThetaGrid:
    """Single-index family: ``h = (h1, h_max, ..., h_max)`` and all grid rotations."""
    h1 = geometric_bandwidths(h_min, h_max, exponent=0.5, count=n_h)
    angles = angle_grid(h_min, c=angle_c, count=n_angles) if base.d == 2 else np.array([0.0])
    params = [
        KernelParam("SI", (float(a),) + (h_max,) * (base.d - 1), float(th), base) for a in h1 for th in angles
    ]
    return ThetaGrid("SI", tuple(params), h_min, h_max, meta={"angles": len(angles), "n_h": len(h1)})


def theta_besov(base, h_min, h_max, n_h=None) -> ThetaGrid:
    """Isotropic family ``h = (a, ..., a)`` with ``E = I``."""
    hs = geometric_bandwidths(h_min, h_max, exponent=base.d / 2.0, count=n_h)
    params = [KernelParam("BESOV", (float(a),) * base.d, 0.0, base) for a in hs]
    return ThetaGrid("BESOV", tuple(params), h_min, h_max, meta={"n_h": len(hs)})


def theta_general(base, h_min, h_max, n_h=None, n_angles=None, angle_c=0.25, family="GENERAL") -> ThetaGrid:
    """Full product of per-axis bandwidth grids and (d = 2) rotations."""
    hs = geometric_bandwidths(h_min, h_max, exponent=0.5, count=n_h)
    angles = angle_grid(h_min, c=angle_c, count=n_angles) if base.d == 2 else np.array([0.0])
    params = []
    for hv in itertools.product(hs, repeat=base.d):
        for th in angles:
            params.append(KernelParam(family, tuple(float(v) for v in hv), float(th), base))
    return ThetaGrid(family, tuple(params), h_min, h_max, meta={"angles": len(angles), "n_h": len(hs)})


def theta_mixed(base, h_min, h_max, n_h=None, n_angles=None, angle_c=0.25) -> ThetaGrid:
    return theta_general(base, h_min, h_max, n_h=n_h, n_angles=n_angles, angle_c=angle_c, family="MIXED")


def theta_aniso(base, gamma, phi, h_min, h_max, n_h=None) -> ThetaGrid:
    """Anisotropic family with ``prod h_i^gamma = phi`` and ``E = I``.

    The first ``d - 1`` bandwidths run over a geometric grid; the last one is
    determined by the constraint and kept only if it lies in ``[h_min, h_max]``.
    """
    d = base.d
    P = phi ** (1.0 / gamma)
    if P < h_min**d * (1 - 1e-12) or P > h_max**d * (1 + 1e-12):
        raise ValueError(f"constraint prod h = {P:.4g} is infeasible for [{h_min}, {h_max}]^{d}")
    lo = max(h_min, P / h_max ** (d - 1))
    hi = min(h_max, P / h_min ** (d - 1))
    hs = geometric_bandwidths(lo, hi, exponent=0.5, count=n_h)
    params = []
    for head in itertools.product(hs, repeat=d - 1):
        last = P / math.prod(head)
        if h_min * (1 - 1e-12) <= last <= h_max * (1 + 1e-12):
            last = min(max(last, h_min), h_max)
            h = tuple(float(v) for v in head) + (float(last),)
            # re-impose the constraint exactly on the free coordinate
            params.append(KernelParam("AH", h, 0.0, base))
    return ThetaGrid("AH", tuple(params), h_min, h_max, meta={"gamma": gamma, "phi": phi, "n_h": len(hs)})


def theta_from_params(family: str, params: Iterable[KernelParam], h_min=None, h_max=None, meta=None) -> ThetaGrid:
    params = tuple(params)
    hs = [v for mu in params for v in mu.h]
    return ThetaGrid(
        family,
        params,
        min(hs) if h_min is None else h_min,
        max(hs) if h_max is None else h_max,
        meta=dict(meta or {}),
    )


# ---------------------------------------------------------------------------
# Discretization on the observation grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Stencil:
    """Cell averages of ``K_mu(. , 0)`` on a centred block of cells.

    ``values[c + k]`` is the average of the kernel over the cell with offset
    ``k`` (in cells) from the query node, where ``c = radius``.
    ``factors`` holds the separable decomposition ``sum_j outer(f_j1, ..)``
    when the kernel is axis aligned.
    """

    values: NDArray[np.float64]
    radius: tuple[int, ...]
    spacing: float
    factors: Optional[tuple[tuple[NDArray[np.float64], ...], ...]] = None

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.spacing ** self.values.ndim)


def _axis_aligned(mu: KernelParam) -> Optional[tuple[float, ...]]:
    """Effective bandwidth order when ``E`` permutes axes (angle multiple of pi/2)."""
    if mu.d != 2 or mu.angle == 0.0:
        return mu.h
    if abs(mu.angle - math.pi / 2) < 1e-15:
        return (mu.h[1], mu.h[0])
    return None


def _cell_factor(base: BaseKernel, j: int, h: float, spacing: float, radius: int) -> NDArray:
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    hi = base.factor_cdf(j, (k + 0.5) * spacing / h)
    lo = base.factor_cdf(j, (k - 0.5) * spacing / h)
    return (hi - lo) / spacing


_SUBCELL = 4


@functools.lru_cache(maxsize=4096)
def tabulate(mu: KernelParam, spacing: float) -> Stencil:
    """Tabulate cell averages of ``K_mu`` for grid spacing ``spacing``.

    Axis-aligned kernels use exact 1-D antiderivatives, so the stencil sums to
    one exactly.  Rotated kernels use a ``4 x 4`` Gauss-Legendre rule in each
    cell followed by renormalization of the total mass.
    """
    base = mu.base
    radius = tuple(int(math.ceil(r / spacing + 0.5)) for r in mu.reach)
    hs = _axis_aligned(mu)
    if hs is not None:
        factors = []
        total = None
        for j, c in enumerate(base._signed_binom, start=1):
            fs = tuple(_cell_factor(base, j, hs[i], spacing, radius[i]) for i in range(mu.d))
            fs = (c * fs[0],) + fs[1:]
            factors.append(fs)
            term = functools.reduce(np.multiply.outer, fs)
            total = term if total is None else total + term
        return Stencil(np.asarray(total), radius, spacing, tuple(factors))
    x0, w0 = np.polynomial.legendre.leggauss(_SUBCELL)
    offs = [np.arange(-r, r + 1, dtype=np.float64) for r in radius]
    sub = [((o[:, None] + 0.5 * x0[None, :]) * spacing).reshape(-1) for o in offs]
    mesh = np.stack(np.meshgrid(*sub, indexing="ij"), axis=-1).reshape(-1, mu.d)
    s = (mesh @ mu.E) / np.asarray(mu.h)
    vals = _accel.separable_sum_eval(s, base.amplitudes, base.dilations, base.profile.breaks, base.profile.coefs)
    vals = vals.reshape(len(offs[0]), _SUBCELL, len(offs[1]), _SUBCELL) / math.prod(mu.h)
    wq = 0.5 * w0
    avg = np.einsum("aibj,i,j->ab", vals, wq, wq)
    avg /= avg.sum() * spacing**mu.d
    return Stencil(avg, radius, spacing, None)


@dataclass(frozen=True, eq=False)
class AuxKernel:
    """Tabulated auxiliary kernel ``K_{mu,nu}(t, x) = int K_mu(t, y) K_nu(y, x) dy``."""

    mu: KernelParam
    nu: KernelParam
    values: NDArray[np.float64]
    radius: tuple[int, ...]
    spacing: float

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.spacing ** self.values.ndim)

    def __call__(self, t, x) -> NDArray[np.float64]:
        """Nearest-cell lookup of ``K_{mu,nu}(t, x)`` (translation invariant)."""
        t = np.atleast_2d(np.asarray(t, dtype=np.float64))
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        k = np.rint((t - x) / self.spacing).astype(np.int64) + np.array(self.radius)
        shape = np.array(self.values.shape)
        ok = np.all((k >= 0) & (k < shape), axis=1)
        out = np.zeros(t.shape[0])
        out[ok] = self.values[tuple(k[ok].T)]
        return out


def convolve_kernels(mu: KernelParam, nu: KernelParam, spacing: float, margin: Optional[float] = None) -> AuxKernel:
    """Discrete convolution of the tabulated profiles of ``mu`` and ``nu``.

    If ``margin`` is given, the combined reach must fit inside it.
    """
    if margin is not None:
        need = float(np.max(mu.reach + nu.reach))
        if need > margin + 1e-12:
            raise ValueError(f"auxiliary kernel support needs margin >= {need:.6g}; grid margin is {margin:.6g}")
    a, b = tabulate(mu, spacing), tabulate(nu, spacing)
    if a.factors is not None and b.factors is not None:
        total = None
        for fa in a.factors:
            for fb in b.factors:
                parts = [np.convolve(fa[i], fb[i]) * spacing for i in range(mu.d)]
                term = functools.reduce(np.multiply.outer, parts)
                total = term if total is None else total + term
        vals = np.asarray(total)
    else:
        vals = signal.convolve(a.values, b.values, method="direct") * spacing**mu.d
    radius = tuple(ra + rb for ra, rb in zip(a.radius, b.radius))
    return AuxKernel(mu, nu, vals, radius, spacing)
