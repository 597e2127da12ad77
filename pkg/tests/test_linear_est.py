import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from ptselect.kernels import KernelParam, make_base_kernel, tabulate, theta_single_index
from ptselect.linear_est import (
    PairEngine,
    SupportOverflowError,
    estimate,
    estimate_aux,
    estimate_aux_direct,
    estimate_field,
    required_margin,
)
from ptselect.oracle import bias_aux_sides, noiseless_field
from ptselect.wgn_sim import make_grid, sample_field, sample_noise_field


def _const(c):
    return lambda p: np.full(p.shape[0], float(c))


def _kernel(d=2, h=(0.1, 0.15), angle=0.0, order=0, profile="quartic"):
    return KernelParam("GENERAL", h[:d], angle, make_base_kernel(profile, d, order))


def _random_kernel(rng, d=2, order=0):
    h = tuple(float(v) for v in rng.uniform(0.05, 0.15, size=d))
    angle = float(rng.uniform(0, math.pi)) if d == 2 else 0.0
    return _kernel(d, h, angle, order)


# ---------------------------------------------------------------- estimate


@pytest.mark.parametrize("angle", [0.0, 0.7])
def test_constants_are_reproduced(angle):
    g = make_grid(2, 129, 0.25)
    fld = sample_field(_const(2.5), 0.0, g, seed=0)
    assert estimate(fld, _kernel(angle=angle), [0.1, -0.2]) == pytest.approx(2.5, abs=1e-6)


def test_zero_signal_estimate_is_centred_normal():
    g = make_grid(1, 257, 0.25)
    mu = _kernel(d=1, h=(0.1,))
    eps, reps = 0.2, 10_000
    vals = np.array([estimate(sample_field(_const(0.0), eps, g, seed=3, replication=b), mu, [0.0]) for b in range(reps)])
    target = (eps * mu.sigma) ** 2
    assert abs(vals.mean()) <= 4 * math.sqrt(target / reps)
    assert abs(vals.var(ddof=1) / target - 1.0) <= 4 * math.sqrt(2.0 / (reps - 1))


@pytest.mark.parametrize("order", [1, 2])
def test_linear_functions_reproduced_by_higher_order_kernels(order):
    g = make_grid(2, 257, 0.25)
    F = lambda p: 0.3 + 1.7 * p[:, 0] - 0.8 * p[:, 1]  # noqa: E731
    fld = sample_field(F, 0.0, g, seed=0)
    mu = _kernel(h=(0.2, 0.1), order=order)
    assert estimate(fld, mu, [0.0, 0.0]) == pytest.approx(0.3, abs=1e-5)


def test_estimate_rejects_window_outside_grid():
    g = make_grid(1, 64, 0.0)
    fld = sample_field(_const(0.0), 0.1, g, seed=0)
    with pytest.raises(SupportOverflowError):
        estimate(fld, _kernel(d=1, h=(0.4,)), [0.45])


def test_estimate_rejects_non_finite_data():
    g = make_grid(1, 64, 0.25)
    fld = sample_field(_const(0.0), 0.1, g, seed=0)
    inc = fld.increments.copy()
    inc[10] = np.nan
    bad = type(fld)(g, inc, 0.1, 0)
    with pytest.raises(ValueError, match="non-finite"):
        estimate(bad, _kernel(d=1, h=(0.1,)), [0.0])


# ---------------------------------------------------------------- estimate_field


def test_estimate_field_constant():
    g = make_grid(2, 97, 0.25)
    fld = sample_field(_const(1.0), 0.0, g, seed=0)
    est = estimate_field(fld, _kernel(angle=0.4))
    assert_allclose(est.values[est.valid], 1.0, atol=1e-6)
    assert not est.valid.all()


@pytest.mark.parametrize("angle", [0.0, math.pi / 2, 1.1])
def test_estimate_field_agrees_with_pointwise(angle):
    g = make_grid(2, 101, 0.25)
    fld = sample_field(lambda p: np.sin(4 * p[:, 0]) * p[:, 1], 0.3, g, seed=5)
    mu = _kernel(angle=angle, order=1)
    est = estimate_field(fld, mu)
    rng = np.random.default_rng(0)
    for x in rng.uniform(-0.5, 0.5, size=(10, 2)):
        assert est.at(g.node_index(x)) == pytest.approx(estimate(fld, mu, x), abs=1e-12)


def test_estimate_field_invalid_node():
    g = make_grid(1, 64, 0.0)
    est = estimate_field(sample_field(_const(0.0), 0.1, g, seed=0), _kernel(d=1, h=(0.3,)))
    with pytest.raises(SupportOverflowError):
        est.at((0,))


def test_estimate_field_runtime_linear_in_grid_size():
    mu = _kernel(h=(0.05, 0.05))

    def best_time(n, margin):
        fld = sample_noise_field(make_grid(2, n, margin), seed=0)
        estimate_field(fld, mu)
        return min(_timed(lambda: estimate_field(fld, mu)) for _ in range(5))

    # same spacing 1/256 (so the same stencil), 4x the cells
    t_small, t_large = best_time(384, 0.25), best_time(768, 1.0)
    assert t_large / t_small < 8.0


def _timed(fn):
    t = time.perf_counter()
    fn()
    return time.perf_counter() - t


# ---------------------------------------------------------------- auxiliary estimates


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_aux_estimate_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    g = make_grid(2, 97, 0.3)
    fld = sample_noise_field(g, seed)
    mu, nu = _random_kernel(rng), _random_kernel(rng)
    x = rng.uniform(-0.4, 0.4, size=2)
    assert estimate_aux(fld, mu, nu, x) == pytest.approx(estimate_aux(fld, nu, mu, x), abs=1e-8)


def test_aux_estimate_reproduces_constants():
    g = make_grid(2, 97, 0.3)
    fld = sample_field(_const(-1.5), 0.0, g, seed=0)
    assert estimate_aux(fld, _kernel(angle=0.3), _kernel(h=(0.12, 0.08)), [0.0, 0.1]) == pytest.approx(-1.5, abs=1e-6)


def test_two_stage_equals_direct_sum():
    rng = np.random.default_rng(42)
    g = make_grid(2, 97, 0.3)
    fld = sample_field(lambda p: np.cos(3 * p[:, 0] + p[:, 1]), 0.5, g, seed=7)
    for _ in range(10):
        mu, nu = _random_kernel(rng, order=int(rng.integers(0, 2))), _random_kernel(rng)
        x = rng.uniform(-0.4, 0.4, size=2)
        assert estimate_aux(fld, mu, nu, x) == pytest.approx(estimate_aux_direct(fld, mu, nu, x), abs=1e-8)


def test_aux_estimate_needs_margin():
    g = make_grid(1, 64, 0.1)
    fld = sample_field(_const(0.0), 0.1, g, seed=0)
    mu = _kernel(d=1, h=(0.15,))
    with pytest.raises(SupportOverflowError):
        estimate_aux(fld, mu, mu, [0.5])


# ---------------------------------------------------------------- pair engine


@pytest.fixture(scope="module")
def small_engine():
    base = make_base_kernel("quartic", 2, 0)
    th = theta_single_index(base, 0.08, 0.16, n_angles=3, n_h=3)
    g = make_grid(2, 1 + 2 * int(math.ceil((0.5 + required_margin(th)) * 64)), 0.0)
    g = make_grid(2, g.n, (g.n / 64.0 - 1.0) / 2.0)
    return th, PairEngine(th, g)


def test_pair_table_matches_loops(small_engine):
    th, eng = small_engine
    fld = sample_field(lambda p: p[:, 0] ** 2 + 0.5 * p[:, 1], 0.3, eng.grid, seed=2)
    x = np.array([0.1, -0.05])
    tab = eng.pair_table(fld, x)
    for m, mu in enumerate(th.params):
        assert tab.single[m] == pytest.approx(estimate(fld, mu, x), abs=1e-12)
        for k in (0, 4, 8):
            assert tab.aux[m, k] == pytest.approx(estimate_aux_direct(fld, mu, th.params[k], x), abs=1e-10)


def test_variance_table_matches_mc_and_minkowski(small_engine):
    th, eng = small_engine
    var = eng.variance_table()
    reps = 1500
    diffs = np.array([(lambda t: t.aux - t.single[None, :])(eng.pair_table(sample_noise_field(eng.grid, 9, b), [0.0, 0.0]))
                      for b in range(reps)])
    emp = diffs.var(axis=0, ddof=1)
    pos = var > 1e-8 * var.max()
    # relative s.e. of a sample variance is sqrt(2 / (reps - 1))
    assert np.max(np.abs(emp[pos] / var[pos] - 1.0)) <= 5 * math.sqrt(2.0 / (reps - 1))
    st_ = th.sigma_tilde
    assert np.all(np.sqrt(var) <= st_[:, None] + st_[None, :])


def test_variance_table_against_stencil_norm(small_engine):
    th, eng = small_engine
    var = eng.variance_table()
    m, n = 1, 5
    mu, nu = th.params[m], th.params[n]
    # independent route: explicit stencils of K_{mu,nu} and K_nu
    from ptselect.kernels import convolve_kernels

    aux = convolve_kernels(mu, nu, eng.grid.spacing)
    sn = tabulate(nu, eng.grid.spacing)
    diff = aux.values.copy()
    off = tuple(a - b for a, b in zip(aux.radius, sn.radius))
    diff[tuple(slice(o, o + s) for o, s in zip(off, sn.values.shape))] -= sn.values
    assert var[m, n] == pytest.approx(float(np.sum(diff**2)) * eng.grid.cell_volume, rel=1e-9)


def test_noiseless_pair_difference_equals_smoothed_bias(small_engine):
    th, eng = small_engine
    F = lambda p: np.abs(p[:, 0] - 0.02) + np.sin(3 * p[:, 1])  # noqa: E731
    x = np.array([0.0, 0.05])
    tab = eng.pair_table(noiseless_field(F, eng.grid), x)
    for m, k in [(0, 1), (2, 7), (5, 5), (8, 0)]:
        mu, nu = th.params[m], th.params[k]
        _, rhs = bias_aux_sides(F, mu, nu, x, eng.grid)
        assert tab.aux[m, k] - tab.single[k] == pytest.approx(rhs, abs=1e-6)


def test_pair_engine_margin_check(small_engine):
    _, eng = small_engine
    with pytest.raises(SupportOverflowError):
        eng.check_margin([eng.grid.half_width - 0.01, 0.0])
