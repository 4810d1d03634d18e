import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import ks_2samp

from randforce.covariance import estimate_sigma_lambda
from randforce.dynamics import IntegratorConfig
from randforce.field import BumpFamily, BumpProfile
from randforce.harness import (CsiViolation, EnsembleConfig, PowerLawRegressor, acceptance_family,
                               compare_particle_to_limit, default_schedule, dyadic_crossing_report,
                               envelope_violations, fit_power_law, ks_noise_floor, ks_statistic,
                               ks_table_monotone, levels_from_path, limit_params_for, run_ensemble)
from randforce.covariance import sigma_lambda_quadrature
from randforce.limit_sde import (DiffusionParams, LimitLaw, exact_energy_sample,
                                 hit_probability_oracle, simulate_v_paths)


# KS -------------------------------------------------------------------------------
def test_ks_examples():
    uni = lambda x: np.clip(x, 0, 1)  # noqa: E731
    assert ks_statistic([0.5], uni) == 0.5
    assert ks_statistic([-3.0, -2.0], uni) == 1.0
    x = np.random.default_rng(0).random(100000)
    assert ks_statistic(x, uni) < 1.95 / math.sqrt(1e5)
    with pytest.raises(ValueError):
        ks_statistic([], uni)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=60))
def test_ks_matches_scipy(xs):
    from scipy.stats import kstest, norm
    assert ks_statistic(xs, norm.cdf) == pytest.approx(kstest(xs, norm.cdf).statistic, abs=1e-12)


def test_noise_floor_is_kolmogorov_median():
    from scipy.stats import kstwobign
    assert ks_noise_floor(100) == pytest.approx(kstwobign.median() / 10, rel=1e-3)


# power laws ------------------------------------------------------------------------
def test_fit_exact_monomials():
    t = np.array([1.0, 10, 100, 1000])
    f = fit_power_law(t, t ** (2 / 3))
    assert f.exponent == pytest.approx(2 / 3, abs=1e-12) and f.exponent_se < 1e-12
    g = fit_power_law(t, 7 * t ** (4 / 3))
    assert g.exponent == pytest.approx(4 / 3, abs=1e-12) and g.intercept == pytest.approx(math.log(7))


@given(st.floats(-3, 3), st.floats(0.1, 10))
def test_fit_recovers_any_monomial(a, c):
    t = np.geomspace(1, 1e4, 6)
    f = fit_power_law(t, c * t ** a)
    assert f.exponent == pytest.approx(a, abs=1e-9)
    assert f.ci_low <= f.exponent <= f.ci_high


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_power_law([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_power_law([1, 2, 3], [1, 0, 2])
    with pytest.raises(ValueError):
        fit_power_law([1, 2, -3], [1, 1, 2])


def test_fit_on_exact_sampler_means():
    t = np.array([1e2, 1e3, 1e4, 1e5])
    P = DiffusionParams(4, 1.0, 1.0)
    m = [exact_energy_sample(ti, P, 200000, seed=k).mean() for k, ti in enumerate(t)]
    f = fit_power_law(t, m)
    assert f.ci_low <= 2 / 3 <= f.ci_high


def test_regressor_wrapper():
    t = np.geomspace(1, 100, 5)
    r = PowerLawRegressor().fit(t.reshape(-1, 1), 3 * t ** 1.5)
    assert r.exponent_ == pytest.approx(1.5)
    assert np.allclose(r.predict(t), 3 * t ** 1.5)
    assert r.score(t.reshape(-1, 1), 3 * t ** 1.5) == pytest.approx(1.0)


# envelope and dyadic levels ---------------------------------------------------------
def test_envelope_mask():
    t = np.array([1.0, 1000.0, 1000.0])
    s = np.array([11.0, 500.0, 0.5])
    assert envelope_violations(t, s, 10.0).tolist() == [False, True, True]


def test_levels_and_monotone_report():
    t = np.linspace(1, 1024, 100000)
    lt, lm = levels_from_path(t, t)
    assert lm.tolist() == list(range(0, 11))
    rep = dyadic_crossing_report([(lt, lm)])
    assert all(r["p_hat"] == 1.0 for r in rep["levels"])
    # first level is skipped; sojourn at level m is (2^{m+1} - 2^m) / 2^{3m}
    assert rep["levels"][0]["level"] == 1
    assert rep["levels"][0]["mean_time_norm"] == pytest.approx(2 / 8, rel=1e-2)


def test_limit_radial_up_crossing_matches_oracle():
    t = np.linspace(0.0005, 8.0, 16000)
    V = simulate_v_paths(DiffusionParams(4, 1.0, 1.0), t, 400, seed=3)
    diag = []
    for path in np.linalg.norm(V, axis=2):
        lt, lm = levels_from_path(t, path)
        diag.append((lt, lm))
    rep = dyadic_crossing_report(diag, min_count=30)
    high = [r for r in rep["levels"] if r["level"] >= -1]
    assert high and all(r["p_hat"] > 0.5 for r in high)
    n = sum(r["n"] for r in high)
    p = sum(r["up"] for r in high) / n
    assert abs(p - hit_probability_oracle(4)) < 4 * math.sqrt(p * (1 - p) / n)


# configs -------------------------------------------------------------------------------
def test_config_validation():
    with pytest.raises(ValueError, match="d >= 4"):
        EnsembleConfig(d=3).validate()
    with pytest.raises(ValueError):
        EnsembleConfig(model="particle-W").validate()
    with pytest.raises(ValueError):
        EnsembleConfig(model="limit-E").validate()
    with pytest.raises(ValueError):
        EnsembleConfig(schedule=[2.0, 1.0]).validate()
    with pytest.raises(ValueError):
        EnsembleConfig(n=0).validate()
    assert default_schedule(10.0).tolist() == [1, 2, 4, 8, 10]


def test_config_roundtrip():
    cfg = EnsembleConfig(model="particle-Y", n=5, seed_base=3, t_max=64.0,
                         family=BumpFamily("mixture", BumpProfile(0.5, 2.0, 0.3), p=0.2),
                         integrator=IntegratorConfig(h0=0.02), target_kept=4)
    back = EnsembleConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back.to_dict() == cfg.to_dict()


def test_limit_params_and_csi():
    p = limit_params_for(BumpFamily())
    assert p.sigma == pytest.approx(p.lam)
    with pytest.raises(CsiViolation):
        limit_params_for(BumpFamily("radial"))


def test_acceptance_family_hits_sigma2():
    f = acceptance_family(0.3, 1.1)
    assert sigma_lambda_quadrature(f)[0] == pytest.approx(1.1, rel=1e-12)


# ensembles -----------------------------------------------------------------------------
def test_empty_field_ensemble():
    cfg = EnsembleConfig(n=2, schedule=[1.0], empty=True, v0=10.0, envelope_points=0)
    rep = run_ensemble(cfg)
    assert np.allclose(rep.speed[:, 0], 10.0)
    assert ks_2samp(rep.speed[:, 0], rep.speed[:, 0]).statistic == 0.0
    assert rep.n_kept == 2 and rep.excluded["trapped"] == 0


def test_ensemble_worker_invariance(tmp_path):
    fam = acceptance_family()
    cfg = EnsembleConfig(model="particle-Y", n=5, seed_base=1, t_max=32.0, family=fam,
                         integrator=IntegratorConfig(h0=0.0625), sigma=0.9, lam=0.9)
    a = run_ensemble(cfg)
    cfg.workers = 3
    b = run_ensemble(cfg)
    assert a.to_json() == b.to_json()
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    for f in (tmp_path / "a").rglob("*.*"):
        assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()
    assert (tmp_path / "a" / "marginals" / "speed_t32.csv").exists()
    summ = json.loads(a.to_json())
    assert summ["schema_version"] == "1.0" and "workers" not in summ["config"]


def test_target_kept_tops_up():
    cfg = EnsembleConfig(n=3, schedule=[1.0], empty=True, envelope_points=0, target_kept=5)
    rep = run_ensemble(cfg)
    assert rep.n_total == 5 and rep.n_kept == 5


def test_exclusions_are_counted_not_dropped():
    integ = IntegratorConfig(v_min=50.0, patience=0.5)
    cfg = EnsembleConfig(n=4, t_max=4.0, empty=True, v0=10.0, integrator=integ, target_kept=2)
    rep = run_ensemble(cfg)
    assert rep.n_kept == 0
    assert rep.excluded["trapped"] == rep.n_total > 4
    assert rep.rates["trapping"] == 1.0 and rep.rates["excluded_fraction"] == 1.0


def test_limit_ensembles_near_noise_floor():
    for model in ("limit-E", "limit-V"):
        cfg = EnsembleConfig(model=model, n=4000, seed_base=2, schedule=[0.5, 1.0], sigma=1.0,
                             lam=1.0)
        rep = run_ensemble(cfg)
        assert all(r["ks_energy"] < 1.95 / math.sqrt(4000) for r in rep.ks)


def test_compare_limit_with_itself():
    cfg = EnsembleConfig(model="limit-E", n=4000, seed_base=5, schedule=[1.0, 8.0, 64.0], sigma=1.0,
                         lam=1.0)
    rep = run_ensemble(cfg)
    # a limit-model report plays the particle role: E(c^3)/c^2 has the t = 1 law
    rows = compare_particle_to_limit(rep, DiffusionParams(4, 1.0, 1.0), [1.0, 2.0, 4.0])
    assert [r["t_particle"] for r in rows] == [1.0, 8.0, 64.0]
    assert all(r["ks_energy"] < 1.95 / math.sqrt(4000) for r in rows)
    assert ks_table_monotone(rows)
    with pytest.raises(ValueError, match="mismatched"):
        compare_particle_to_limit(rep, DiffusionParams(4, 1.0, 1.0), [3.0])


def test_compare_refuses_radial_family():
    rep = run_ensemble(EnsembleConfig(model="limit-E", n=50, schedule=[1.0], sigma=1.0, lam=1.0))
    est = estimate_sigma_lambda(BumpFamily("radial"), method="quadrature")
    with pytest.raises(CsiViolation, match="csi_violated"):
        compare_particle_to_limit(rep, est, [1.0])


def test_ks_table_monotone_rule():
    rows = [{"ks_energy": 0.2, "noise_floor": 0.01}, {"ks_energy": 0.21, "noise_floor": 0.01},
            {"ks_energy": 0.1, "noise_floor": 0.01}]
    assert ks_table_monotone(rows, floors=2.0)
    rows[1]["ks_energy"] = 0.3
    assert not ks_table_monotone(rows, floors=2.0)


def test_cbar_fit_close_to_derived_for_limit_model():
    cfg = EnsembleConfig(model="limit-E", n=20000, seed_base=9, schedule=[1.0, 2.0, 4.0], sigma=0.8,
                         lam=0.8)
    rep = run_ensemble(cfg)
    assert rep.cbar_fit == pytest.approx(LimitLaw(4, 0.8).cbar, rel=0.03)
    assert rep.cbar_derived == LimitLaw(4, 0.8).cbar
    assert rep.fits["energy"]["exponent"] == pytest.approx(2 / 3, abs=0.05)
