"""Linear kernel estimators and the auxiliary (two-stage) estimators.

Estimates are cell sums ``F_mu(y) = sum_k Kbar_mu[k] * Y[y + k]`` where
``Kbar_mu`` is the tabulated stencil of cell averages and ``Y`` the observed
increments.  Auxiliary estimates use the identity

    F_{mu,nu}(x) = sum_j Kbar_nu[j] * F_mu(x + j) * vol,

i.e. the estimate field of ``mu`` smoothed once more by ``nu``.
:class:`PairEngine` evaluates this for every pair of a Theta grid at one node
through FFTs on a local patch.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy import fft as sfft
from scipy import ndimage

from .kernels import KernelParam, Stencil, ThetaGrid, convolve_kernels, tabulate
from .wgn_sim import Grid

__all__ = [
    "SupportOverflowError",
    "EstimateField",
    "PairTable",
    "PairEngine",
    "estimate",
    "estimate_field",
    "estimate_aux",
    "estimate_aux_direct",
    "required_margin",
]


class SupportOverflowError(ValueError):
    """A kernel window around the query node leaves the grid."""


def required_margin(theta: ThetaGrid, pairs: bool = True) -> float:
    """Smallest grid margin for which every (auxiliary) kernel at D0 stays inside D."""
    reach = max(float(np.max(mu.reach)) for mu in theta.params)
    return 2.0 * reach if pairs else reach


def _window(arr: NDArray, center: tuple[int, ...], radius: tuple[int, ...]) -> NDArray:
    sl = []
    for c, r, n in zip(center, radius, arr.shape[-len(center):]):
        if c - r < 0 or c + r >= n:
            raise SupportOverflowError(
                f"kernel window of radius {r} cells around node {c} exceeds the grid of {n} cells"
            )
        sl.append(slice(c - r, c + r + 1))
    return arr[(Ellipsis, *sl)]


def _data(field) -> tuple[Grid, NDArray]:
    inc = np.asarray(field.increments, dtype=np.float64)
    if not np.all(np.isfinite(inc)):
        raise ValueError("observation field contains non-finite increments")
    return field.grid, inc


def estimate(field, mu: KernelParam, x) -> float:
    """Pointwise estimate ``F_mu(x)`` at the grid node nearest to ``x``."""
    grid, inc = _data(field)
    st = tabulate(mu, grid.spacing)
    c = grid.node_index(x)
    win = _window(inc, c, st.radius)
    return float(np.sum(st.values * win))


@dataclass(frozen=True, eq=False)
class EstimateField:
    """Estimates ``F_mu(y)`` at all nodes; ``valid`` marks nodes whose window fits in the grid."""

    mu: KernelParam
    grid: Grid
    values: NDArray[np.float64]
    valid: NDArray[np.bool_]

    def at(self, index) -> float:
        index = tuple(index)
        if not self.valid[index]:
            raise SupportOverflowError(f"estimate at node {index} needs data outside the grid")
        return float(self.values[index])


def _valid_mask(grid: Grid, radius) -> NDArray[np.bool_]:
    masks = []
    for r in radius:
        k = np.arange(grid.n)
        masks.append((k >= r) & (k < grid.n - r))
    return functools.reduce(np.multiply.outer, masks).astype(bool)


def estimate_field(field, mu: KernelParam) -> EstimateField:
    """Apply the estimator at every node (separable 1-D passes when ``E`` is axis aligned)."""
    grid, inc = _data(field)
    st = tabulate(mu, grid.spacing)
    if st.factors is not None:
        out = np.zeros_like(inc)
        for fs in st.factors:
            cur = inc
            for ax, f in enumerate(fs):
                cur = ndimage.correlate1d(cur, f, axis=ax, mode="constant", cval=0.0)
            out += cur
    else:
        out = ndimage.correlate(inc, st.values, mode="constant", cval=0.0)
    return EstimateField(mu, grid, out, _valid_mask(grid, st.radius))


def estimate_aux(field, mu: KernelParam, nu: KernelParam, x, est_mu: Optional[EstimateField] = None) -> float:
    """Two-stage auxiliary estimate: smooth the ``mu`` estimate field with ``K_nu``."""
    grid = field.grid
    est = estimate_field(field, mu) if est_mu is None else est_mu
    st = tabulate(nu, grid.spacing)
    c = grid.node_index(x)
    vwin = _window(est.valid, c, st.radius)
    if not np.all(vwin[st.values != 0]):
        raise SupportOverflowError(f"auxiliary estimate for {mu.label()} and {nu.label()} needs a larger margin")
    win = _window(est.values, c, st.radius)
    return float(np.sum(st.values * win) * grid.cell_volume)


def estimate_aux_direct(field, mu: KernelParam, nu: KernelParam, x) -> float:
    """Direct sum ``sum_i K_{mu,nu}(t_i, x) y_i`` with the tabulated auxiliary kernel."""
    grid, inc = _data(field)
    aux = convolve_kernels(mu, nu, grid.spacing)
    c = grid.node_index(x)
    win = _window(inc, c, aux.radius)
    return float(np.sum(aux.values * win))


# ---------------------------------------------------------------------------
# All pairs at one node
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PairTable:
    """``aux[m, k] = F_{mu_m, nu_k}(x)`` and ``single[k] = F_{nu_k}(x)`` at one node."""

    aux: NDArray[np.float64]
    single: NDArray[np.float64]

    @property
    def diff(self) -> NDArray[np.float64]:
        """``|F_{mu,nu}(x) - F_nu(x)|`` with rows ``mu`` and columns ``nu``."""
        return np.abs(self.aux - self.single[None, :])


class PairEngine:
    """Evaluate ``F_{mu,nu}(x)`` for all pairs of a grid at a node.

    Every stencil is embedded into a common block of half-width ``R`` cells.
    For a node ``x`` the estimates ``F_mu`` on the block around ``x`` are
    obtained from one FFT of the data patch of half-width ``2R``; the pair
    table is then a single matrix product with the stacked stencils.
    """

    def __init__(self, theta: ThetaGrid, grid: Grid):
        self.theta = theta
        self.grid = grid
        spacing = grid.spacing
        self.stencils: list[Stencil] = [tabulate(mu, spacing) for mu in theta.params]
        d = grid.d
        R = tuple(max(st.radius[i] for st in self.stencils) for i in range(d))
        self.R = R
        self.window_shape = tuple(2 * r + 1 for r in R)
        stack = np.zeros((len(self.stencils),) + self.window_shape)
        for m, st in enumerate(self.stencils):
            sl = tuple(slice(R[i] - st.radius[i], R[i] + st.radius[i] + 1) for i in range(d))
            stack[(m, *sl)] = st.values
        self.stack = stack.reshape(len(self.stencils), -1)
        self.center = int(np.ravel_multi_index(R, self.window_shape))
        self.patch_radius = tuple(2 * r for r in R)
        self.nfft = tuple(sfft.next_fast_len(4 * r + 1, real=True) for r in R)
        # correlation = convolution with the point-reflected stencil
        flipped = stack[(slice(None),) + (slice(None, None, -1),) * d]
        self.spectra = sfft.rfftn(flipped, s=self.nfft, axes=tuple(range(1, d + 1)))
        self.crop = tuple(slice(2 * r, 4 * r + 1) for r in R)

    def check_margin(self, x) -> None:
        _window(np.empty(self.grid.shape, dtype=np.int8), self.grid.node_index(x), self.patch_radius)

    def local_estimates(self, increments: NDArray, x) -> NDArray[np.float64]:
        """``F_mu`` on the common block around ``x`` for all ``mu``; shape ``(|Theta|, S)``."""
        c = self.grid.node_index(x)
        patch = _window(increments, c, self.patch_radius)
        d = self.grid.d
        axes = tuple(range(-d, 0))
        spec = sfft.rfftn(patch, s=self.nfft, axes=axes)
        full = sfft.irfftn(self.spectra * spec[None], s=self.nfft, axes=axes)
        win = full[(slice(None), *self.crop)]
        return win.reshape(win.shape[0], -1)

    def pair_table(self, field_or_increments, x) -> PairTable:
        inc = getattr(field_or_increments, "increments", field_or_increments)
        inc = np.asarray(inc, dtype=np.float64)
        local = self.local_estimates(inc, x)
        aux = (local @ self.stack.T) * self.grid.cell_volume
        single = local[:, self.center].copy()
        if not (np.all(np.isfinite(aux)) and np.all(np.isfinite(single))):
            raise ValueError("non-finite estimator value; the observation field is corrupt")
        return PairTable(aux, single)

    def variance_table(self) -> NDArray[np.float64]:
        """Exact ``Var(F_{mu,nu}(x) - F_nu(x))`` per unit noise, for all pairs.

        ``F_{mu,nu} - F_nu`` has stencil ``Kbar_mu * Kbar_nu * vol - Kbar_nu``
        (discrete convolution), so the variance is the squared stencil norm
        times the cell volume.
        """
        d = self.grid.d
        vol = self.grid.cell_volume
        n = len(self.stencils)
        out = np.zeros((n, n))
        blocks = self.stack.reshape((n,) + self.window_shape)
        shape = tuple(4 * r + 1 for r in self.R)
        fs = tuple(sfft.next_fast_len(s) for s in shape)
        spec = sfft.rfftn(blocks, s=fs, axes=tuple(range(1, d + 1)))
        pad = tuple(slice(r, 3 * r + 1) for r in self.R)
        for m in range(n):
            conv = sfft.irfftn(spec[m][None] * spec, s=fs, axes=tuple(range(1, d + 1)))[(slice(None),) + tuple(slice(0, s) for s in shape)]
            conv = conv * vol
            conv[(slice(None), *pad)] -= blocks
            out[m] = np.sum(conv.reshape(n, -1) ** 2, axis=1) * vol
        return out
