import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear_market
from glmcompete.market import (
    MarketConfig,
    MarketError,
    ParamSpace,
    PriceBox,
    eval_mean_demand,
    index_bounds,
    index_bounds_bruteforce,
    make_link,
    make_seller,
    sample_demand,
    sample_demands,
    validate_market,
)


def test_identity_link_constants():
    lk = make_link("identity", {"offset": 1.0}, (-1.0, 0.3))
    assert (lk.c_mu, lk.L_mu, lk.B, lk.B2) == (1.0, 1.0, 1.3, 0.0)


def test_logistic_link_constants():
    lk = make_link("logistic", None, (-2.0, 2.0))
    e2 = math.exp(2.0)
    assert lk.c_mu == pytest.approx(e2 / (1 + e2) ** 2, rel=1e-12)
    assert lk.c_mu == pytest.approx(0.104994, abs=1e-6)
    assert lk.L_mu == 0.25
    assert lk.B == pytest.approx(e2 / (1 + e2))
    # |mu''| peaks at +-log(2 + sqrt 3), inside [-2, 2]
    u = np.linspace(-2, 2, 200001)
    assert lk.B2 == pytest.approx(np.max(np.abs(lk.deriv2(u))), rel=1e-8)


def test_logistic_curvature_bound_at_endpoint_when_peak_outside():
    lk = make_link("logistic", None, (-0.5, 0.5))
    assert lk.B2 == pytest.approx(float(abs(lk.deriv2(0.5))))


def test_identity_negative_demand_rejected():
    with pytest.raises(MarketError, match="negative"):
        make_link("identity", {"offset": 0.5}, (-1.0, 0.0))


@pytest.mark.parametrize("kind,params,U", [
    ("weibull", None, (0, 1)),
    ("identity", {"offset": 1.0}, (1.0, 0.0)),
    ("identity", {"offset": 1.0, "scale": 2}, (0.0, 1.0)),
    ("logistic", {"offset": 1.0}, (0.0, 1.0)),
    ("logistic", None, (0.0, math.inf)),
])
def test_make_link_errors(kind, params, U):
    with pytest.raises(MarketError):
        make_link(kind, params, U)


def test_link_derivatives_match_finite_differences():
    for lk in (make_link("logistic", None, (-3, 3)), make_link("identity", {"offset": 4.0}, (-3, 3))):
        u = np.linspace(-3, 3, 13)
        h = 1e-5
        assert np.allclose(lk.deriv(u), (lk.mean(u + h) - lk.mean(u - h)) / (2 * h), atol=1e-9)
        assert np.allclose(lk.deriv2(u), (lk.deriv(u + h) - lk.deriv(u - h)) / (2 * h), atol=1e-8)
        assert np.allclose(lk.mean(u), (lk.log_partition(u + h) - lk.log_partition(u - h)) / (2 * h), atol=1e-8)


def test_index_bounds_examples():
    assert index_bounds(ParamSpace((1.0, 2.0), ()), PriceBox((0.0,), (1.0,)), 0) == (-2.0, 0.0)
    space = ParamSpace((1.0, 1.0), ((0.3, 0.3),))
    assert index_bounds(space, PriceBox((0.0, 0.0), (1.0, 1.0)), 0) == pytest.approx((-1.0, 0.3))


def test_index_bounds_point_box():
    space = ParamSpace((1.0, 1.0), ((0.3, 0.3),))
    # a point price box is not allowed, so shrink it to a sliver
    box = PriceBox((0.4, 0.7), (0.4 + 1e-12, 0.7 + 1e-12))
    lo, hi = index_bounds(space, box, 0)
    assert lo == pytest.approx(-0.4 + 0.21) and hi == pytest.approx(lo)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10_000))
def test_index_bounds_match_corner_enumeration(n, seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(0, 1, n)
    box = PriceBox(tuple(lo), tuple(lo + rng.uniform(0.1, 2, n)))
    b = np.sort(rng.uniform(0.1, 3, 2))
    g = np.sort(rng.uniform(-1, 1, (n - 1, 2)), axis=1)
    space = ParamSpace(tuple(b), tuple(map(tuple, g)))
    i = int(rng.integers(n))
    assert index_bounds(space, box, i) == pytest.approx(index_bounds_bruteforce(space, box, i))


def test_eval_mean_demand_examples():
    box = PriceBox((0.0, 0.0), (1.0, 1.0))
    s = make_seller(0, 1.0, [0.3], box, "identity", {"offset": 1.0})
    assert eval_mean_demand(s, (0.5, 0.5)) == pytest.approx(0.65)
    assert eval_mean_demand(s, (1.0, 0.0)) == pytest.approx(0.0)
    lg = make_seller(0, 1.0, [1.0], box, "logistic")
    assert eval_mean_demand(lg, (0.3, 0.3)) == pytest.approx(0.5)
    with pytest.raises(MarketError):
        eval_mean_demand(s, (1.5, 0.0))


def test_sample_demand_moments():
    rng = np.random.default_rng(0)
    box = PriceBox((0.0, 0.0), (1.0, 1.0))
    lg = make_seller(0, 1.0, [1.0], box, "logistic")
    ys = np.array([sample_demand(lg, (0.3, 0.3), rng) for _ in range(20000)])
    assert set(np.unique(ys)) <= {0.0, 1.0}
    market = linear_market()
    draws = np.array([sample_demands(market, (0.5, 0.5), rng) for _ in range(200_000)])
    assert np.all(np.abs(draws.mean(axis=0) - 0.65) < 3 * math.sqrt(1 / 200_000) * 1.5)
    big = rng.random(10**6) < 0.5
    assert abs(big.mean() - 0.5) <= 0.002


def test_correlated_noise_covariance():
    market = linear_market(noise="correlated", noise_cov=((1.0, 0.6), (0.6, 1.0)))
    rng = np.random.default_rng(1)
    draws = np.array([sample_demands(market, (0.5, 0.5), rng) for _ in range(100_000)])
    assert np.corrcoef(draws.T)[0, 1] == pytest.approx(0.6, abs=0.01)


@pytest.mark.parametrize("kwargs,match", [
    ({"noise": "correlated"}, "noise_cov"),
    ({"noise": "correlated", "noise_cov": ((2.0, 0.0), (0.0, 2.0))}, "unit diagonal"),
    ({"noise": "correlated", "noise_cov": ((1.0, 2.0), (2.0, 1.0))}, "semidefinite"),
    ({"noise": "pink"}, "noise mode"),
])
def test_noise_config_errors(kwargs, match):
    with pytest.raises(MarketError, match=match):
        linear_market(**kwargs)


def test_correlated_noise_needs_gaussian_sellers():
    box = PriceBox((0.1, 0.1), (1.0, 1.0))
    sellers = (make_seller(0, 1.0, [0.3], box, "logistic"), make_seller(1, 1.0, [0.3], box, "logistic"))
    with pytest.raises(MarketError, match="Gaussian"):
        MarketConfig(sellers, 10, "correlated", ((1.0, 0.0), (0.0, 1.0)))


def test_seller_outside_parameter_box_rejected():
    box = PriceBox((0.0, 0.0), (1.0, 1.0))
    with pytest.raises(MarketError, match="outside"):
        make_seller(0, 1.0, [0.3], box, "identity", {"offset": 1.0}, (0.5, 0.9), [(0.0, 0.5)])


def test_validate_symmetric_market():
    rep = validate_market(linear_market())
    assert rep.ok and rep.L_gamma == pytest.approx(0.3)
    assert rep.xi_hat == pytest.approx([2.0, 2.0])
    assert rep.to_dict()["flags"]["contraction"]


def test_validate_flags_contraction_failure():
    box = PriceBox((0.0,) * 3, (1.0,) * 3)
    sellers = tuple(make_seller(i, 1.0, [0.6, 0.5], box, "identity", {"offset": 3.0}) for i in range(3))
    rep = validate_market(MarketConfig(sellers, 10))
    assert not rep.ok and not rep.flags["contraction"]
    assert rep.L_gamma == pytest.approx(1.1)
    assert any("contraction" in m for m in rep.messages)


def test_validate_flags_nonconcave_logistic():
    box = PriceBox((0.2, 0.2), (2.0, 2.0))
    sellers = (make_seller(0, 2.0, [0.5], box, "logistic", None, (1.5, 2.5), [(0.0, 1.0)]),
               make_seller(1, 2.0, [0.5], box, "logistic", None, (1.5, 2.5), [(0.0, 1.0)]))
    rep = validate_market(MarketConfig(sellers, 10))
    assert not rep.flags["strong_concavity"] and rep.flags["log_concavity"]
