import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ptselect import bench
from ptselect.bench import (
    besov_case,
    bundled_config,
    bundled_configs,
    dry_run,
    fit_rate,
    global_risk,
    logfactor,
    parse_config,
    phi_eps,
    pointwise_risk,
    rate_fit,
    run_experiment,
)
from ptselect.kernels import KernelParam, make_base_kernel


def _cfg(**over):
    exp = {"name": "t", "d": "1", "reps": "60", "seed": "7", "x": "0.0", "spacing": "1/256"}
    exp.update(over.pop("experiment", {}))
    fam = {"family": "BESOV", "h_min": "0.05", "h_max": "0.25", "n_h": "4", "majorant": "BESOV-44", "e_reps": "100"}
    fam.update(over.pop("family", {}))
    fn = {"id": "holder", "alpha": "1.0", "L": "1.0", "shape": "cusp"}
    fn.update(over.pop("function", {}))
    eps = over.pop("eps", "0.2, 0.1, 0.05, 0.025")
    lines = ["[experiment]"] + [f"{k} = {v}" for k, v in exp.items()]
    lines += ["[eps]", f"values = {eps}"]
    lines += ["[function]"] + [f"{k} = {v}" for k, v in fn.items()]
    lines += ["[family:B]"] + [f"{k} = {v}" for k, v in fam.items()]
    return parse_config("\n".join(lines) + "\n")


# ---------------------------------------------------------------- rates


@pytest.mark.parametrize("kind", ["none", "sqrt_ln", "sqrt_lnln"])
def test_fit_of_exact_power_law(kind):
    eps = 0.2 * 0.5 ** np.arange(5)
    risk = 3.0 * (eps * logfactor(kind, eps)) ** 0.5
    fit = fit_rate(eps, risk, kind)
    assert fit.slope == pytest.approx(0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
    assert_allclose(fit.residuals, 0.0, atol=1e-12)


def test_fit_interval_covers_noisy_slope():
    rng = np.random.default_rng(0)
    eps = 0.2 * 0.5 ** np.arange(6)
    risk = eps ** (2 / 3) * np.exp(rng.normal(0, 0.01, eps.size))
    fit = fit_rate(eps, risk)
    assert fit.ci[0] < fit.slope < fit.ci[1]
    assert abs(fit.slope - 2 / 3) < 0.05


def test_fit_errors():
    with pytest.raises(ValueError, match="at least 4"):
        fit_rate([0.1, 0.05, 0.02], [1.0, 0.5, 0.2])
    with pytest.raises(ValueError, match="degenerate"):
        fit_rate([0.1, 0.05, 0.02, 0.01], [1.0] * 4)
    with pytest.raises(ValueError, match="positive"):
        fit_rate([0.1, 0.05, 0.02, 0.01], [1.0, 0.5, 0.0, 0.1])
    with pytest.raises(ValueError):
        logfactor("sqrt_lnln", [0.5])


def test_target_exponents():
    assert 2 * 1 / (2 * 1 + 1) == pytest.approx(0.6667, abs=1e-4)
    g = 2 / 3
    assert 2 * g / (2 * g + 1) == pytest.approx(4 / 7)
    assert 1 / (1 / 1 + 1 / 2) == pytest.approx(2 / 3)
    eps = np.array([0.1, 0.01])
    assert_allclose(phi_eps(eps, 1.0, 2.0, 2.0, 1), eps ** (2 / 3))


def test_besov_regimes():
    assert besov_case(1.0, 2.0, 2.0, 1) == "dense"
    assert besov_case(0.5, 1.0, 2.0, 1) == "boundary"
    assert besov_case(0.25, 1.0, 4.0, 1) == "sparse"
    eps = np.array([0.1])
    lead = eps * np.sqrt(np.log(10.0))
    assert_allclose(phi_eps(eps, 0.5, 1.0, 2.0, 1), lead ** 0.5 * np.log(10.0) ** 0.5)
    expo = (0.25 - (1 - 0.25)) / (0.25 - (1 - 0.5))
    assert_allclose(phi_eps(eps, 0.25, 1.0, 4.0, 1), lead**expo)


# ---------------------------------------------------------------- configs


def test_parse_config_fields():
    cfg = _cfg(experiment={"target": "2/3"}, family={"gamma": "2/3"})
    assert cfg.d == 1 and cfg.reps == 60 and cfg.seed == 7
    assert cfg.spacing == 1 / 256
    assert cfg.target == pytest.approx(2 / 3)
    assert cfg.eps == (0.2, 0.1, 0.05, 0.025)
    fc = cfg.family("B")
    assert fc.family == "BESOV" and fc.n_h == 4 and fc.gamma == pytest.approx(2 / 3)
    assert cfg.function_params == {"alpha": 1.0, "L": 1.0, "shape": "cusp", "d": 1}


def test_geometric_eps_section():
    text = _cfg().source.replace("values = 0.2, 0.1, 0.05, 0.025", "start = 0.2\nratio = 0.5\ncount = 5")
    cfg = parse_config(text)
    assert_allclose(cfg.eps, 0.2 * 0.5 ** np.arange(5))


@pytest.mark.parametrize(
    "over, match",
    [
        ({"eps": "0.1, 0.2, 0.05, 0.01"}, "decreasing"),
        ({"eps": "1.5, 0.1"}, r"\(0, 1\)"),
        ({"experiment": {"reps": "10"}}, "at least 50"),
        ({"experiment": {"risk": "median"}}, "risk"),
        ({"experiment": {"x": "0.0, 0.1"}}, "coordinates"),
        ({"family": {"family": "XX"}}, "unknown kind"),
        ({"family": {"family": "AH"}}, "gamma"),
        ({"family": {"majorant": "Q-1"}}, "majorant"),
        ({"family": {"e_reps": "20"}}, "e_reps"),
        ({"experiment": {"logfactor": "cubic"}}, "logfactor"),
    ],
)
def test_config_validation_errors(over, match):
    with pytest.raises(ValueError, match=match):
        _cfg(**over)


def test_config_missing_sections():
    with pytest.raises(ValueError, match=r"\[eps\]"):
        parse_config("[experiment]\nd = 1\n[function]\nid = constant\n")
    with pytest.raises(ValueError, match="id"):
        parse_config("[experiment]\nd = 1\nx = 0.0\n[eps]\nvalues = 0.1\n[function]\nc = 1\n")
    with pytest.raises(ValueError):
        parse_config("not an ini file")


def test_every_bundled_config_dry_runs():
    names = bundled_configs()
    assert {"theorem2-desk", "theorem3-desk", "theorem4-dense-desk", "theorem4-sparse-desk"} <= set(names)
    for name in names:
        info = dry_run(bundled_config(name))
        assert info["name"] == name
        for rows in info["families"].values():
            assert len(rows) == len(info["eps"])
            assert all(r["size"] >= 1 for r in rows)
    with pytest.raises(KeyError):
        bundled_config("no-such-config")


# ---------------------------------------------------------------- risks


def test_zero_signal_singleton_risk_is_eps_sigma():
    cfg = _cfg(
        experiment={"reps": "400"},
        function={"id": "constant", "c": "0.0", "alpha": "", "L": "", "shape": ""},
        family={"h_min": "0.1", "h_max": "0.1", "n_h": "1"},
        eps="0.2, 0.1, 0.05, 0.025",
    )
    cfg = replace(cfg, function_params={"c": 0.0, "d": 1})
    rep = pointwise_risk(cfg)["B"]
    sigma = KernelParam("BESOV", (0.1,), 0.0, make_base_kernel("quartic", 1, 0)).sigma
    assert_allclose(rep.risk / (rep.eps * sigma), 1.0, atol=3 / math.sqrt(cfg.reps))
    assert np.all(rep.theta_size == 1)


def test_risk_decreases_with_eps():
    cfg = _cfg(experiment={"reps": "100"}, eps="0.2, 0.1, 0.05, 0.025, 0.0125")
    rep = pointwise_risk(cfg)["B"]
    assert np.all(np.diff(rep.risk) < 0)
    assert rep.fit is not None
    slope, ci = rate_fit(rep)
    assert slope == pytest.approx(rep.fit.slope) and ci[0] < slope < ci[1]


def test_global_on_one_node_equals_pointwise_at_that_node():
    cfg = _cfg(experiment={"reps": "60"})
    glob = global_risk(replace(cfg, risk="global", x=(), x_nodes=1))["B"]
    point = pointwise_risk(cfg)["B"]
    assert_allclose(glob.risk, point.risk, rtol=1e-12)


def test_global_risk_within_factor_three_of_worst_node():
    cfg = _cfg(
        experiment={"reps": "50", "risk": "global", "x_nodes": "16", "x": ""},
        function={"id": "besov", "s": "1.0", "p": "2.0", "L": "1.0", "seed": "3", "alpha": "", "shape": ""},
        family={"h_min": "eps2", "h_max": "besov", "order": "1"},
        eps="0.1, 0.05, 0.025, 0.0125",
    )
    cfg = replace(cfg, function_params={"s": 1.0, "p": 2.0, "L": 1.0, "seed": 3, "d": 1})
    *_, errs, _, _, reports = bench._run(cfg)
    rep = reports["B"]
    for k in range(len(cfg.eps)):
        node_risk = np.sqrt(np.mean(errs["B"][k] ** 2, axis=0))
        assert rep.risk[k] <= node_risk.max() * (1 + 1e-12)
        assert rep.risk[k] >= node_risk.max() / 3


def test_run_experiment_is_deterministic(tmp_path):
    cfg = _cfg(experiment={"reps": "50"})
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    files = ["risk.csv", "fit.csv", "plot.csv", "etable_B_0.csv", "oracle_B.json", "traces/B_eps0_rep0.csv"]
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    c = run_experiment(cfg, tmp_path / "c", seed=8)
    assert (c / "risk.csv").read_bytes() != (a / "risk.csv").read_bytes()


def test_run_experiment_reports_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="cannot create"):
        run_experiment(_cfg(), blocker / "sub")


def test_oracle_stability_summary():
    cfg = _cfg(experiment={"reps": "50"})
    rep = pointwise_risk(cfg)["B"]
    top, spread = rep.oracle_stability()
    assert top == pytest.approx(np.nanmax(rep.ratio))
    assert spread >= 1.0
