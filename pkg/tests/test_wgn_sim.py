import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from ptselect.func_classes import make_function
from ptselect.wgn_sim import (
    derive_rng,
    make_grid,
    read_field,
    sample_field,
    sample_noise_field,
    write_field,
)


def _const(c):
    return lambda p: np.full(p.shape[0], float(c))


# ---------------------------------------------------------------- make_grid


def test_grid_spacing_unit_cube():
    g = make_grid(1, 4, 0.0)
    assert g.spacing == 0.25
    assert g.cell_volume == 0.25


def test_grid_spacing_with_margin():
    g = make_grid(2, 64, 0.5)
    assert g.spacing == pytest.approx(2.0 / 64.0)
    assert g.cell_volume == pytest.approx((2.0 / 64.0) ** 2)


def test_riemann_sum_of_one_over_d0():
    g = make_grid(1, 256, 0.25)
    assert float(np.sum(g.d0_weights()) * g.cell_volume) == pytest.approx(1.0, abs=1e-12)


@given(d=st.integers(1, 3), n=st.integers(2, 64), margin=st.floats(0.0, 1.0))
def test_d0_weights_integrate_to_one(d, n, margin):
    g = make_grid(d, n, margin)
    w = g.d0_weights()
    assert w.shape == g.shape
    assert float(np.sum(w) * g.cell_volume) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("d, n, margin", [(0, 8, 0.0), (4, 8, 0.0), (1, 1, 0.0), (1, 8, -0.1), (1, 8, math.inf)])
def test_make_grid_rejects_bad_arguments(d, n, margin):
    with pytest.raises(ValueError):
        make_grid(d, n, margin)


def test_make_grid_memory_cap():
    with pytest.raises(MemoryError):
        make_grid(3, 1000, 0.0, max_cells=10**6)


@given(d=st.integers(1, 3), n=st.integers(2, 300), margin=st.floats(0.0, 2.0))
def test_grid_coordinates_symmetric_and_cover_d(d, n, margin):
    g = make_grid(d, n, margin)
    ax = g.axis
    assert g.n * g.spacing == pytest.approx(1.0 + 2.0 * margin)
    assert_allclose(ax, -ax[::-1], atol=1e-12)
    assert ax[0] - g.spacing / 2 == pytest.approx(-(0.5 + margin))


@given(x=st.floats(-0.5, 0.5), n=st.integers(8, 200).filter(lambda v: v % 2 == 1))
def test_snap_is_nearest_node(x, n):
    g = make_grid(1, n, 0.25)
    snapped = g.snap([x])[0]
    assert abs(snapped - x) <= g.spacing / 2 + 1e-12
    assert np.min(np.abs(g.axis - x)) == pytest.approx(abs(snapped - x), abs=1e-12)


def test_node_index_outside_grid():
    g = make_grid(2, 16, 0.0)
    with pytest.raises(ValueError):
        g.node_index([0.0, 0.9])
    with pytest.raises(ValueError):
        g.node_index([0.0])


# ---------------------------------------------------------------- sample_field


def test_noiseless_constant_is_exact():
    g = make_grid(2, 32, 0.1)
    fld = sample_field(_const(1.0), 0.0, g, seed=3)
    assert np.all(fld.increments == g.cell_volume)


def test_zero_signal_is_pure_noise():
    g = make_grid(2, 128, 0.0)
    eps = 0.3
    fld = sample_field(_const(0.0), eps, g, seed=11)
    var = float(np.var(fld.increments))
    target = eps**2 * g.cell_volume
    # sample variance of N = 16384 normals has relative s.e. sqrt(2/N)
    assert abs(var / target - 1.0) <= 4.0 * math.sqrt(2.0 / fld.increments.size)
    assert abs(float(np.mean(fld.increments))) <= 4.0 * math.sqrt(target / fld.increments.size)


def test_one_cell_moments_over_replications():
    g = make_grid(1, 4, 0.0)
    reps = 10_000
    vals = np.array([sample_field(_const(1.0), 0.1, g, seed=5, replication=b).increments[1] for b in range(reps)])
    vol = g.cell_volume
    sd = math.sqrt(0.01 * vol)
    assert abs(vals.mean() - vol) <= 4 * sd / math.sqrt(reps)
    assert abs(vals.var(ddof=1) / (0.01 * vol) - 1.0) <= 4 * math.sqrt(2.0 / (reps - 1))


def test_sample_field_reproducible_and_readonly():
    g = make_grid(2, 40, 0.2)
    F = make_function("single_index", d=2, alpha=0.5, L=1.0, shape="cusp")
    a = sample_field(F, 0.2, g, seed=9, replication=4)
    b = sample_field(F, 0.2, g, seed=9, replication=4)
    assert a.increments.tobytes() == b.increments.tobytes()
    with pytest.raises(ValueError):
        a.increments[0, 0] = 1.0


def test_sample_field_rejects_bad_eps_and_nonfinite_truth():
    g = make_grid(1, 16, 0.0)
    with pytest.raises(ValueError):
        sample_field(_const(0.0), -1.0, g, seed=0)
    with pytest.raises(ValueError):
        sample_field(_const(0.0), math.nan, g, seed=0)
    with pytest.raises(ValueError, match="not finite"):
        sample_field(lambda p: np.where(p[:, 0] > 0, np.inf, 0.0), 0.1, g, seed=0)


def test_linear_functional_mean_and_variance():
    g = make_grid(1, 64, 0.0)
    t = g.axis
    G = np.cos(3 * t)
    F = lambda p: p[:, 0] ** 2  # noqa: E731
    eps = 0.5
    reps = 4000
    vals = np.array([np.sum(G * sample_field(F, eps, g, seed=1, replication=b).increments) for b in range(reps)])
    mean = float(np.sum(G * t**2) * g.cell_volume)
    var = eps**2 * float(np.sum(G**2)) * g.cell_volume
    assert abs(vals.mean() - mean) <= 4 * math.sqrt(var / reps)
    assert abs(vals.var(ddof=1) / var - 1.0) <= 4 * math.sqrt(2.0 / (reps - 1))


# ---------------------------------------------------------------- sample_noise_field


def test_noise_field_determinism():
    g = make_grid(2, 20, 0.0)
    a = sample_noise_field(g, seed=2, replication=7)
    b = sample_noise_field(g, seed=2, replication=7)
    assert_array_equal(a.increments, b.increments)
    assert a.eps == 1.0


def test_noise_total_mass_distribution():
    g = make_grid(1, 32, 0.25)
    reps = 10_000
    tot = np.array([sample_noise_field(g, 4, b).increments.sum() for b in range(reps)])
    vol_D = (1.0 + 2 * g.margin) ** g.d
    assert abs(tot.mean()) <= 4 * math.sqrt(vol_D / reps)
    assert abs(tot.var(ddof=1) / vol_D - 1.0) <= 4 * math.sqrt(2.0 / (reps - 1))


def test_noise_four_cells_variance():
    g = make_grid(1, 4, 0.0)
    reps = 10_000
    z = np.array([sample_noise_field(g, 8, b).increments for b in range(reps)])
    assert_allclose(z.var(axis=0, ddof=1), 0.25, rtol=4 * math.sqrt(2.0 / reps))


def test_replication_streams_uncorrelated():
    g = make_grid(1, 512, 0.0)
    reps = 40
    rows = np.array([sample_noise_field(g, 13, b).increments for b in range(reps)])
    rho = np.corrcoef(rows)
    off = rho[~np.eye(reps, dtype=bool)]
    assert np.max(np.abs(off)) < 4 / math.sqrt(g.n)


def test_field_and_noise_roles_are_distinct_streams():
    a = derive_rng(1, 0, "field").standard_normal(8)
    b = derive_rng(1, 0, "noise").standard_normal(8)
    assert not np.allclose(a, b)
    with pytest.raises(ValueError):
        derive_rng(1, 0, "bogus")


# ---------------------------------------------------------------- I/O


@settings(max_examples=10, deadline=None)
@given(d=st.integers(1, 2), n=st.integers(2, 24), eps=st.floats(0.0, 2.0), seed=st.integers(0, 2**31))
def test_write_read_roundtrip(tmp_path_factory, d, n, eps, seed):
    g = make_grid(d, n, 0.125)
    fld = sample_field(_const(0.25), eps, g, seed=seed)
    path = tmp_path_factory.mktemp("f") / "field.bin"
    write_field(path, fld)
    back = read_field(path)
    assert back.grid == g
    assert back.eps == fld.eps and back.seed == fld.seed
    assert back.increments.tobytes() == fld.increments.tobytes()


def test_read_field_truncated(tmp_path):
    g = make_grid(1, 8, 0.0)
    path = write_field(tmp_path / "f.bin", sample_field(_const(0.0), 0.1, g, seed=0))
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="expected"):
        read_field(path)
    path.write_bytes(raw[:5])
    with pytest.raises(ValueError, match="truncated"):
        read_field(path)
