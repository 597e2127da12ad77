import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, optimize

from ptselect.func_classes import make_holder_1d, make_single_index
from ptselect.kernels import KernelParam, make_base_kernel, rotation, theta_besov, theta_from_params
from ptselect.linear_est import PairEngine
from ptselect.majorant import MajorantSpec, default_grid
from ptselect.oracle import (
    bias,
    bias_aux_delta,
    bias_aux_sides,
    bias_field,
    integrated_bias,
    integrated_bias_all,
    lemma2_bound,
    oracle_report,
    rho_exact,
    semimetric_check,
    theta_F,
)
from ptselect.wgn_sim import make_grid


def _const(c):
    return lambda p: np.full(p.shape[0], float(c))


def _spec(theta, kappa0=4.0, kappa1=128.0):
    return MajorantSpec(
        "GENERAL-21", theta.sigma_min, theta.sigma_max, r=1.0, kappa0=kappa0, kappa1=kappa1, e=lambda s: np.asarray(s)
    )


def _k(h, angle=0.0, order=0, profile="quartic", family="GENERAL"):
    return KernelParam(family, tuple(h), angle, make_base_kernel(profile, len(h), order))


# ---------------------------------------------------------------- bias


def test_bias_of_constant():
    g = make_grid(2, 129, 0.25)
    assert bias(_const(3.0), _k((0.1, 0.2), angle=0.5), [0.1, 0.0], g) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("order", [1, 2])
def test_bias_of_linear_function(order):
    g = make_grid(2, 129, 0.25)
    F = lambda p: 2.0 * p[:, 0] - p[:, 1] + 0.5  # noqa: E731
    assert bias(F, _k((0.15, 0.1), angle=0.3, order=order), [0.05, -0.1], g) == pytest.approx(0.0, abs=1e-5)


@pytest.mark.parametrize("profile", ["quartic", "triweight"])
def test_bias_of_square_matches_second_moment(profile):
    g = make_grid(1, 1025, 0.5)
    h = 0.2
    base = make_base_kernel(profile, 1, 0)
    m2, _ = integrate.quad(lambda u: u * u * float(base(u)), -0.5, 0.5, epsabs=1e-14)
    got = bias(lambda p: p[:, 0] ** 2, _k((h,), profile=profile), [0.0], g)
    assert got == pytest.approx(h * h * m2, abs=1e-5)


# ---------------------------------------------------------------- smoothed bias identity


def test_bias_aux_of_constant():
    g = make_grid(2, 129, 0.5)
    lhs, rhs = bias_aux_sides(_const(-2.0), _k((0.1, 0.15), 0.4), _k((0.12, 0.08)), [0.0, 0.0], g)
    assert lhs == pytest.approx(0.0, abs=1e-6) and rhs == pytest.approx(0.0, abs=1e-6)


def _smooth_F(rng, d):
    a = rng.normal(size=(3, d))
    ph = rng.uniform(0, 2 * math.pi, 3)
    return lambda p: np.sum(np.cos(p @ a.T * 3.0 + ph), axis=1)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.sampled_from([1, 2]))
def test_smoothed_bias_identity(seed, d):
    rng = np.random.default_rng(seed)
    n = 257 if d == 1 else 129
    g = make_grid(d, n, 0.5)
    F = _smooth_F(rng, d)

    def rand_k():
        h = tuple(float(v) for v in rng.uniform(0.06, 0.2, d))
        return _k(h, float(rng.uniform(0, math.pi)) if d == 2 else 0.0, order=int(rng.integers(0, 2)))

    mu, nu = rand_k(), rand_k()
    x = rng.uniform(-0.3, 0.3, d)
    lhs, rhs = bias_aux_sides(F, mu, nu, x, g)
    assert abs(lhs - rhs) <= 1e-3 * max(abs(lhs), abs(rhs), 1e-3)


def test_narrow_nu_recovers_bias_of_mu():
    g = make_grid(1, 2049, 0.5)
    F = lambda p: np.sin(6 * p[:, 0]) + p[:, 0] ** 3  # noqa: E731
    mu, nu = _k((0.3,)), _k((0.004,))
    x = [0.1]
    got = bias_aux_delta(F, mu, nu, x, g)
    assert got == pytest.approx(bias(F, mu, x, g), rel=2e-3)


# ---------------------------------------------------------------- integrated bias


@pytest.fixture(scope="module")
def besov_setup():
    th = theta_besov(make_base_kernel("quartic", 1, 1), 0.04, 0.3, n_h=5)
    g = default_grid(th, spacing=1.0 / 256)
    return th, g, PairEngine(th, g)


def test_integrated_bias_of_constant_is_zero(besov_setup):
    th, g, eng = besov_setup
    _, Bt = integrated_bias_all(_const(4.0), th, [0.0], g, eng)
    assert_allclose(Bt, 0.0, atol=1e-6)


def test_integrated_bias_loops_equal_engine(besov_setup):
    th, g, eng = besov_setup
    F = lambda p: np.abs(p[:, 0] - 0.05) ** 0.7  # noqa: E731
    B, Bt = integrated_bias_all(F, th, [0.0], g, eng)
    for m, mu in enumerate(th.params):
        assert integrated_bias(F, mu, th, [0.0], g) == pytest.approx(Bt[m], abs=1e-10)
        assert B[m] == pytest.approx(bias(F, mu, [0.0], g), abs=1e-10)


@pytest.mark.parametrize("shape", ["cusp", "cosine"])
def test_integrated_bias_envelope(besov_setup, shape):
    th, g, eng = besov_setup
    F = make_holder_1d(0.8 if shape == "cusp" else 1.5, 1.0, shape=shape, t0=0.02)
    B, Bt = integrated_bias_all(F, th, [0.0], g, eng)
    assert np.all(Bt >= np.abs(B))
    d1 = np.abs(g.axis) <= 0.5 + 1e-12
    M = th.params[0].base.norm_l1
    for m, mu in enumerate(th.params):
        bf, valid = bias_field(F, mu, g)
        sup = float(np.max(np.abs(bf[valid & d1])))
        assert Bt[m] <= M * sup * (1 + 1e-9)


def test_single_index_aligned_bias_bound():
    angle = math.pi / 6
    F = make_single_index(make_holder_1d(1.0, 1.0, "cusp"), rotation(angle)[:, 0])
    base = make_base_kernel("quartic", 2, 0)
    th = theta_from_params("SI", [KernelParam("SI", (h1, 0.25), angle, base) for h1 in (0.04, 0.08, 0.16)])
    g = default_grid(th, spacing=1.0 / 128)
    _, Bt = integrated_bias_all(F, th, [0.0, 0.0], g)
    for m, mu in enumerate(th.params):
        assert Bt[m] <= base.norm_l1 * 1.0 * mu.h[0]


def test_sigma_tilde_bounded_by_l1_times_sigma():
    th = theta_besov(make_base_kernel("triweight", 2, 2), 0.05, 0.2, n_h=4)
    M = max(mu.base.norm_l1 for mu in th.params)
    for mu in th.params:
        assert mu.sigma_tilde <= M * mu.sigma * (1 + 1e-12)


# ---------------------------------------------------------------- oracle set


def test_theta_f_of_constant_is_everything(besov_setup):
    th, g, eng = besov_setup
    res = theta_F(_const(1.0), th, 0.01, _spec(th), [0.0], g, eng)
    assert res.members.all()
    assert res.mu_star == int(np.argmin(th.rank))


def test_theta_f_membership_grows_with_eps(besov_setup):
    th, g, eng = besov_setup
    F = lambda p: 3.0 * p[:, 0] ** 2  # noqa: E731
    B_pair = integrated_bias_all(F, th, [0.0], g, eng)
    spec = _spec(th)
    prev = None
    sizes = []
    for eps in np.geomspace(1e-5, 1.0, 12):
        mem = theta_F(F, th, eps, spec, B_pair=B_pair).members
        if prev is not None:
            assert np.all(mem >= prev)
        prev = mem
        sizes.append(int(mem.sum()))
    assert sizes[0] < len(th) and sizes[-1] == len(th)


def test_theta_f_empty_result(besov_setup):
    th, g, eng = besov_setup
    res = theta_F(lambda p: 50.0 * np.abs(p[:, 0]), th, 1e-6, _spec(th), [0.0], g, eng)
    assert res.empty and not res.members.any()


def test_cusp_oracle_matches_bisection_balance():
    base = make_base_kernel("quartic", 1, 0)
    th = theta_besov(base, 0.02, 0.4, n_h=14)
    g = default_grid(th, spacing=1.0 / 512)
    spec = _spec(th, kappa0=0.0, kappa1=0.0)  # Q(sigma) = sigma
    eps = 0.05
    F = make_holder_1d(1.0, 1.0, "cusp")
    res = theta_F(F, th, eps, spec, [0.0], g)
    # envelope: B~(h) = B_h(0) = h int |u| G(u) du for a positive symmetric kernel and the cusp at 0
    m1, _ = integrate.quad(lambda u: abs(u) * float(base(u)), -0.5, 0.5, points=[0.0], epsabs=1e-14)
    sig = lambda h: KernelParam("BESOV", (h,), 0.0, base).sigma_tilde  # noqa: E731
    h_bal = optimize.brentq(lambda h: h * m1 - 0.25 * eps * sig(h), th.h_min, th.h_max, xtol=1e-12)
    hs = sorted(mu.h[0] for mu in th.params)
    h_star = th.params[res.mu_star].h[0]
    below = max(h for h in hs if h <= h_bal)
    assert abs(hs.index(h_star) - hs.index(below)) <= 1


# ---------------------------------------------------------------- report


def test_oracle_report_json(besov_setup, tmp_path):
    th, g, eng = besov_setup
    rep = oracle_report(_const(0.0), th, 0.1, _spec(th), [0.0], g, eng)
    data = json.loads(rep.to_json(tmp_path / "o.json"))
    assert data["mu_star"] == int(np.argmin(th.rank))
    assert data["theta_F_size"] == len(th)
    assert data["bound_eps_Q"] == pytest.approx(0.1 * 5.0 * th.sigma_min)  # Q(sigma_min) = 4 sigma_min + sigma_min
    assert json.loads((tmp_path / "o.json").read_text()) == data


# ---------------------------------------------------------------- semi-metric


def test_identical_pairs_have_zero_distance():
    th = theta_from_params("GENERAL", [_k((0.1, 0.15), 0.3), _k((0.12, 0.12))])
    rep = semimetric_check(th, [((0, 1), (0, 1))], 1.0 / 128)
    assert rep.exact[0] == pytest.approx(0.0, abs=1e-12)
    assert rep.ok


def _lemma2_formula(nu, nu2, h_min):
    M = nu.base.grad_bound
    h, h2 = np.array(nu.h), np.array(nu2.h)
    scale = M * math.sqrt(float(np.sum((1 - h / h2) ** 2))) + 2 * abs(1 - float(np.prod(h2 / h)))
    rot = M * nu.d / h_min * float(np.linalg.norm(nu.E - nu2.E, 2))
    return 2 * nu.sigma_tilde * (scale + rot)


def test_bandwidth_perturbation_bound():
    mu, nu = _k((0.12, 0.1)), _k((0.1, 0.08))
    nu2 = _k((0.11, 0.088))
    th = theta_from_params("GENERAL", [mu, nu, nu2])
    rho = rho_exact(th, (0, 1), (0, 2), 1.0 / 256)
    bound = _lemma2_formula(nu, nu2, th.h_min)
    assert 0.0 < rho <= bound
    assert lemma2_bound(nu, nu2, th.h_min) == pytest.approx(bound, rel=1e-12)


def test_rotation_perturbation_bound():
    mu, nu = _k((0.12, 0.1)), _k((0.1, 0.06), 0.2)
    nu2 = _k((0.1, 0.06), 0.23)
    th = theta_from_params("GENERAL", [mu, nu, nu2])
    rho = rho_exact(th, (0, 1), (0, 2), 1.0 / 256)
    bound = 2 * nu.sigma_tilde * nu.base.grad_bound * 2 / th.h_min * float(np.linalg.norm(nu.E - nu2.E, 2))
    assert 0.0 < rho <= bound
    rep = semimetric_check(th, [((0, 1), (0, 2)), ((1, 2), (0, 1))], 1.0 / 256)
    assert rep.ok
    assert rep.lemma2[1] is None
