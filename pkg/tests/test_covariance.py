import json
import math

import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from sklearn.base import clone

from randforce.covariance import (CovarianceEstimate, SigmaLambdaEstimator, correlation_at,
                                  correlation_closed_form, estimate_sigma_lambda,
                                  sigma_lambda_closed_form, sigma_lambda_quadrature,
                                  zero_lag_variance)
from randforce.field import BumpFamily, BumpProfile


def fam(kind="uniform", R=0.5, A=1.0, d=4, p=0.5):
    return BumpFamily(kind, BumpProfile(R, 1e300, A), d=d, p=p)


# deterministic routes ----------------------------------------------------------
@given(st.sampled_from(["uniform", "radial", "mixture"]), st.floats(0.1, 3.0), st.integers(4, 7),
       st.floats(0.0, 1.0))
def test_closed_form_matches_quadrature(kind, R, d, p):
    f = fam(kind, R=R, A=0.7, d=d, p=p)
    q = sigma_lambda_quadrature(f)
    c = sigma_lambda_closed_form(f)
    assert c[0] == pytest.approx(q[0], rel=1e-9, abs=1e-300)
    assert c[1] == pytest.approx(q[1], rel=1e-9)


@pytest.mark.parametrize("kind,R,d", [("uniform", 0.25, 4), ("mixture", 0.7, 5), ("radial", 1.3, 4)])
def test_time_integral_of_correlation(kind, R, d):
    """sigma^2 and lambda^2 as t-integrals of the Campbell correlation (third route)."""
    f = fam(kind, R=R, d=d)
    s2 = integrate.quad(lambda t: correlation_closed_form(f, t, 1), -2 * R, 2 * R, epsabs=1e-14,
                        limit=100)[0]
    l2 = integrate.quad(lambda t: correlation_closed_form(f, t, 2), -2 * R, 2 * R, epsabs=1e-14,
                        limit=100)[0]
    q = sigma_lambda_quadrature(f)
    scale = q[1]
    assert abs(s2 - q[0]) < 1e-6 * scale
    assert abs(l2 - q[1]) < 1e-6 * scale


def test_uniform_is_scalar_and_radial_is_gradient():
    s2, l2 = sigma_lambda_quadrature(fam("uniform"))
    assert s2 > 0 and s2 == pytest.approx(l2, rel=1e-14)
    s2, l2 = sigma_lambda_quadrature(fam("radial"))
    assert s2 == 0.0 and l2 > 0
    s2, l2 = sigma_lambda_quadrature(fam("mixture", p=0.5))
    assert l2 > s2 > 0


def test_mixture_is_additive():
    su, _ = sigma_lambda_quadrature(fam("uniform"))
    _, lr = sigma_lambda_quadrature(fam("radial"))
    sm, lm = sigma_lambda_quadrature(fam("mixture", p=0.3))
    assert sm == pytest.approx(0.7 * su) and lm == pytest.approx(0.7 * su + 0.3 * lr)


def test_amplitude_and_radius_scaling():
    a = sigma_lambda_quadrature(fam(R=0.5, A=1.0))[0]
    b = sigma_lambda_quadrature(fam(R=0.5, A=3.0))[0]
    c = sigma_lambda_quadrature(fam(R=1.0, A=1.0))[0]
    assert b == pytest.approx(9 * a)
    assert c == pytest.approx(a * 2 ** 5)  # R^{d+1} in d = 4


@given(st.floats(-1.5, 1.5), st.sampled_from([1, 2]), st.sampled_from(["uniform", "mixture"]))
def test_correlation_even_and_supported(t, comp, kind):
    f = fam(kind)
    assert correlation_closed_form(f, t, comp) == pytest.approx(correlation_closed_form(f, -t, comp),
                                                                abs=1e-15)
    if abs(t) >= 1.0:
        assert correlation_closed_form(f, t, comp) == 0.0


def test_zero_lag_oracle_uniform():
    """A^2 K(0) / d with K(0) = int phi^2 = |S^3| int r^3 (1 - r^2/R^2)^6 dr."""
    f = fam(R=0.8, A=2.0)
    K0 = 2 * math.pi ** 2 * integrate.quad(lambda r: r ** 3 * (1 - r * r / 0.64) ** 6, 0, 0.8)[0]
    assert zero_lag_variance(f, 1) == pytest.approx(4.0 * K0 / 4, rel=1e-10)


def test_component_validation():
    with pytest.raises(ValueError):
        correlation_closed_form(fam(), 0.1, 3)
    with pytest.raises(ValueError):
        correlation_at(fam(), 0.1, 0)


# Monte Carlo ---------------------------------------------------------------------
def test_mc_correlation_at_zero_lag():
    f = fam()
    v, se = correlation_at(f, 0.0, 1, draws=3000, seed=1)
    assert abs(v - zero_lag_variance(f, 1)) < 3 * se


def test_mc_correlation_even_and_supported():
    f = fam("mixture")
    a, sa = correlation_at(f, 0.3, 2, draws=3000, seed=2)
    b, sb = correlation_at(f, -0.3, 2, draws=3000, seed=3)
    assert abs(a - b) < 3 * math.hypot(sa, sb)
    assert abs(a - correlation_closed_form(f, 0.3, 2)) < 3 * sa
    assert correlation_at(f, 1.0, 1) == (0.0, 0.0)


def test_mc_uniform_agrees_with_quadrature():
    f = fam()
    est = estimate_sigma_lambda(f, 3000, seed=4)
    s2, l2 = sigma_lambda_quadrature(f)
    assert abs(est.sigma2 - s2) < 3 * est.sigma2_err
    assert abs(est.lambda2 - l2) < 3 * est.lambda2_err
    assert not est.csi_violated
    assert len(est.t_grid) == 48 and min(est.t_grid) > -1.0 and max(est.t_grid) < 1.0


def test_mc_reseeding_invariance():
    f = fam("mixture")
    a = estimate_sigma_lambda(f, 2000, seed=5)
    b = estimate_sigma_lambda(f, 2000, seed=6)
    assert abs(a.sigma2 - b.sigma2) < 3 * math.hypot(a.sigma2_err, b.sigma2_err)
    assert abs(a.lambda2 - b.lambda2) < 3 * math.hypot(a.lambda2_err, b.lambda2_err)
    assert a.lambda2 > a.sigma2 > 0


def test_mc_radial_negative_control():
    est = estimate_sigma_lambda(fam("radial"), 2000, seed=7)
    assert est.csi_violated
    assert abs(est.sigma2) < 3 * est.sigma2_err
    assert est.lambda2 > 3 * est.lambda2_err


def test_mc_worker_invariance():
    f = fam()
    a = estimate_sigma_lambda(f, 1000, seed=8, workers=1)
    b = estimate_sigma_lambda(f, 1000, seed=8, workers=2)
    assert a.to_json() == b.to_json()


def test_budget_and_method_validation():
    with pytest.raises(ValueError):
        estimate_sigma_lambda(fam(), 999)
    with pytest.raises(ValueError):
        estimate_sigma_lambda(fam(), 1000, method="spectral")
    q = estimate_sigma_lambda(fam(), method="quadrature")
    assert q.sigma2_err == 0.0 and q.method == "quadrature"


def test_json_report_keys():
    est = estimate_sigma_lambda(fam("radial"), method="quadrature")
    d = json.loads(est.to_json())
    assert set(d) == {"sigma2", "sigma2_err", "lambda2", "lambda2_err", "csi_violated", "family",
                      "budget", "seed", "method"}
    assert d["csi_violated"] is True


def test_estimator_wrapper():
    est = SigmaLambdaEstimator(kind="uniform", R=0.5, A=1.0, m=1e300, budget=1000, seed=3)
    c = clone(est)
    assert c.get_params() == est.get_params()
    est.fit()
    assert isinstance(est.estimate_, CovarianceEstimate)
    assert est.sigma2_ == est.estimate_.sigma2 and est.csi_violated_ is False
