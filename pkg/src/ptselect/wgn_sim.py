"""Grid discretization of the Gaussian white noise model.

Observations are cell increments ``y_i = F(t_i) * vol + eps * sqrt(vol) * z_i``
on a regular grid of ``n`` cells per axis covering
``D = [-(1/2 + margin), 1/2 + margin]^d``.  Cell centres are the nodes ``t_i``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "Grid",
    "ObservationField",
    "NoiseField",
    "make_grid",
    "sample_field",
    "sample_noise_field",
    "derive_rng",
    "write_field",
    "read_field",
    "DEFAULT_MAX_CELLS",
]

DEFAULT_MAX_CELLS = 50_000_000

# role codes for the counter-based seed derivation
ROLES = {"field": 0, "noise": 1, "function": 2, "aux": 3}


def derive_rng(seed: int, replication: int = 0, role: str = "field") -> np.random.Generator:
    """Independent generator for (master seed, replication index, role).

    Streams are derived with ``SeedSequence`` spawn keys, so any replication can
    be regenerated without touching the others.
    """
    if role not in ROLES:
        raise ValueError(f"unknown RNG role {role!r}; expected one of {sorted(ROLES)}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replication), ROLES[role]))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class Grid:
    """Regular cell-centred grid over the enlarged cube D."""

    d: int
    n: int
    margin: float

    @property
    def spacing(self) -> float:
        return (1.0 + 2.0 * self.margin) / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.d

    @property
    def half_width(self) -> float:
        return 0.5 + self.margin

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def axis(self) -> NDArray[np.float64]:
        """Cell-centre coordinates along one axis (symmetric about 0)."""
        k = np.arange(self.n, dtype=np.float64)
        return -self.half_width + (k + 0.5) * self.spacing

    @property
    def coords(self) -> tuple[NDArray[np.float64], ...]:
        ax = self.axis
        return tuple(ax for _ in range(self.d))

    def points(self) -> NDArray[np.float64]:
        """All nodes as an array of shape ``shape + (d,)``."""
        mesh = np.meshgrid(*self.coords, indexing="ij")
        return np.stack(mesh, axis=-1)

    def node_index(self, x) -> tuple[int, ...]:
        """Index of the node nearest to ``x`` (query points snap to nodes)."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if x.shape != (self.d,):
            raise ValueError(f"point must have {self.d} coordinates, got shape {x.shape}")
        idx = np.rint((x + self.half_width) / self.spacing - 0.5).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= self.n):
            raise ValueError(f"point {x.tolist()} lies outside the grid")
        return tuple(int(i) for i in idx)

    def node(self, index) -> NDArray[np.float64]:
        index = np.asarray(index, dtype=np.float64)
        return -self.half_width + (index + 0.5) * self.spacing

    def snap(self, x) -> NDArray[np.float64]:
        return self.node(self.node_index(x))

    def d0_mask(self) -> NDArray[np.bool_]:
        """Boolean mask of nodes lying in D0 = [-1/2, 1/2]^d."""
        inside = np.abs(self.axis) <= 0.5 + 1e-12
        mask = inside
        for _ in range(self.d - 1):
            mask = np.multiply.outer(mask, inside)
        return np.asarray(mask, dtype=bool)

    def d0_weights(self) -> NDArray[np.float64]:
        """Fraction of each cell lying inside D0 (cell-sum quadrature weights over D0)."""
        lo = self.axis - self.spacing / 2
        frac = np.clip(np.minimum(lo + self.spacing, 0.5) - np.maximum(lo, -0.5), 0.0, None) / self.spacing
        out = frac
        for _ in range(self.d - 1):
            out = np.multiply.outer(out, frac)
        return np.asarray(out, dtype=np.float64)


def make_grid(d: int, n: int, margin: float = 0.0, max_cells: int = DEFAULT_MAX_CELLS) -> Grid:
    """Build a grid with ``n`` cells per axis over D = [-(1/2+margin), 1/2+margin]^d."""
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3; got {d}")
    if int(n) != n or n < 2:
        raise ValueError(f"n must be an integer >= 2; got {n}")
    if not np.isfinite(margin) or margin < 0:
        raise ValueError(f"margin must be a finite non-negative length; got {margin}")
    if int(n) ** d > max_cells:
        raise MemoryError(f"grid with {int(n)}^{d} cells exceeds the cap of {max_cells} cells")
    return Grid(d=int(d), n=int(n), margin=float(margin))


@dataclass(frozen=True, eq=False)
class ObservationField:
    grid: Grid
    increments: NDArray[np.float64]
    eps: float
    seed: int
    replication: int = 0
    truth_id: Optional[str] = None

    def __post_init__(self):
        self.increments.setflags(write=False)


@dataclass(frozen=True, eq=False)
class NoiseField:
    grid: Grid
    increments: NDArray[np.float64]
    seed: int
    replication: int = 0
    eps: float = field(default=1.0, init=False)

    def __post_init__(self):
        self.increments.setflags(write=False)


def _truth_values(F: Callable, grid: Grid) -> NDArray[np.float64]:
    pts = grid.points().reshape(-1, grid.d)
    vals = np.asarray(F(pts), dtype=np.float64)
    if vals.size == 1 and pts.shape[0] != 1:
        vals = np.full(pts.shape[0], float(vals))
    vals = vals.reshape(grid.shape)
    if not np.all(np.isfinite(vals)):
        bad = np.argwhere(~np.isfinite(vals))[0]
        raise ValueError(f"test function is not finite at grid node {tuple(int(b) for b in bad)}")
    return vals


def sample_field(
    F: Callable,
    eps: float,
    grid: Grid,
    seed: int,
    replication: int = 0,
    truth_values: Optional[NDArray] = None,
) -> ObservationField:
    """Draw one observation field.

    Args:
        F: callable mapping an ``(N, d)`` array of points to ``N`` values.
        eps: noise level (``eps = 0`` gives noiseless increments).
        grid: discretization grid.
        seed: master seed.
        replication: replication counter for the seed derivation.
        truth_values: optional precomputed ``F`` on the grid nodes.

    Returns:
        ObservationField with increments ``F * vol + eps * sqrt(vol) * z``.
    """
    if eps < 0 or not np.isfinite(eps):
        raise ValueError(f"eps must be finite and non-negative; got {eps}")
    vals = _truth_values(F, grid) if truth_values is None else np.asarray(truth_values, dtype=np.float64)
    vol = grid.cell_volume
    z = derive_rng(seed, replication, "field").standard_normal(grid.shape)
    inc = vals * vol + eps * np.sqrt(vol) * z
    return ObservationField(
        grid=grid,
        increments=inc,
        eps=float(eps),
        seed=int(seed),
        replication=int(replication),
        truth_id=getattr(F, "tag", None),
    )


def sample_noise_field(grid: Grid, seed: int, replication: int = 0) -> NoiseField:
    """Pure white-noise increments with variance ``cell_volume`` per cell."""
    z = derive_rng(seed, replication, "noise").standard_normal(grid.shape)
    return NoiseField(grid=grid, increments=np.sqrt(grid.cell_volume) * z, seed=int(seed), replication=int(replication))


_HEADER = struct.Struct("<qqddq")


def write_field(path, fld) -> Path:
    """Dump a field as a little-endian binary column file."""
    path = Path(path)
    g = fld.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(g.d, g.n, g.margin, float(fld.eps), int(fld.seed)))
        fh.write(np.ascontiguousarray(fld.increments, dtype="<f8").tobytes(order="C"))
    return path


def read_field(path) -> ObservationField:
    """Load a field written by :func:`write_field`."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    d, n, margin, eps, seed = _HEADER.unpack_from(raw, 0)
    grid = make_grid(d, n, margin)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != n**d:
        raise ValueError(f"{path}: expected {n**d} increments, found {body.size}")
    return ObservationField(grid=grid, increments=body.reshape(grid.shape).astype(np.float64), eps=eps, seed=seed)
