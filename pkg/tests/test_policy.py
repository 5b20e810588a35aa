import math

import numpy as np
import pytest

from glmcompete.market import make_link
from glmcompete.policy import ConfidenceParams, SellerLearner, confidence_radius

ALPHA1 = make_link("identity", {"offset": 1.0}, (-1.0, 0.5))


def _params(**kw):
    base = dict(delta=0.01, horizon=100, reg=1.0, B_p=math.sqrt(2), B_theta=2.0, L_mu=1.0, c_mu=1.0, n=2)
    base.update(kw)
    return ConfidenceParams(**base)


def test_confidence_radius_example():
    c, rho = confidence_radius(_params(), 10)
    exact = math.sqrt(2 * math.log(1e4) + 2 * math.log(11))
    assert c == pytest.approx(exact, rel=1e-14)
    assert c == pytest.approx(4.818347, abs=5e-7)
    assert rho == pytest.approx(2 * (exact + 2), rel=1e-14)
    assert rho == pytest.approx(13.636695, abs=5e-7)


def test_confidence_radius_no_data():
    c, _ = confidence_radius(_params(L_mu=0.25, reg=3.0), 0)
    assert c == pytest.approx(0.25 * math.sqrt(2 * math.log(100 / 0.01)))


def test_rho_monotone():
    rhos = [confidence_radius(_params(), s)[1] for s in range(0, 500, 7)]
    assert np.all(np.diff(rhos) >= 0)
    by_delta = [confidence_radius(_params(delta=d), 50)[1] for d in (0.5, 0.1, 0.01, 1e-4)]
    assert np.all(np.diff(by_delta) > 0)


@pytest.mark.parametrize("kw", [{"delta": 0.0}, {"delta": 1.0}, {"reg": 0.0}, {"n": 0}])
def test_confidence_params_validation(kw):
    with pytest.raises(ValueError):
        _params(**kw)


def _learner(link=ALPHA1, grid=1001, rho=None, theta=None, lo=0.0, hi=1.0):
    return SellerLearner(0, 2, link, (lo, hi), 2.0, _params(), grid_size=grid, rho_override=rho,
                         fixed_theta=theta)


def test_ucb_value_examples():
    lr = _learner()
    est, bonus = lr.ucb_value(1.0, [0.0], theta=[-1.0, 0.3], rho=1.0)
    assert est + bonus == pytest.approx(1.0)
    est, bonus = lr.ucb_value(0.0, [0.4], theta=[-1.0, 0.3], rho=5.0)
    assert est == 0.0 and bonus == 0.0
    est, bonus = lr.ucb_value(0.6, [0.4], theta=[-1.0, 0.3], rho=0.0)
    assert bonus == 0.0 and est == pytest.approx(0.6 * (1 - 0.6 + 0.12))
    with pytest.raises(ValueError):
        lr.ucb_value(1.5, [0.0], theta=[-1.0, 0.3])


def test_choose_price_recovers_best_response():
    for G in (11, 101, 1001):
        lr = _learner(grid=G, rho=0.0, theta=[-1.0, 0.3])
        q = 0.5
        br = (1 + 0.3 * q) / 2
        d = lr.choose_price([q])
        assert abs(d.price - br) <= 0.5 / (G - 1) + 1e-12


def test_choose_price_tie_breaks_low():
    flat = make_link("identity", {"offset": 0.0}, (0.0, 1.0))
    lr = _learner(link=flat, rho=0.0, theta=[0.0, 0.0], lo=0.2, hi=0.9)
    assert lr.choose_price([0.3]).price == 0.2


def test_two_point_grid():
    lr = _learner(grid=2, rho=0.0, theta=[-1.0, 0.3])
    # revenue at 0 is 0, at 1 is 1 - 1 + 0.3 q > 0
    assert lr.choose_price([0.5]).price == 1.0
    lr = _learner(grid=2, rho=0.0, theta=[-1.0, 0.0])
    assert lr.choose_price([0.5]).price == 0.0


def test_prices_stay_in_interval_and_bonus_shrinks():
    rng = np.random.default_rng(0)
    lr = SellerLearner(1, 2, ALPHA1, (0.2, 0.8), 2.0, _params(), grid_size=101)
    x = np.array([0.5, 0.5])
    prev = lr.design.norms(x)[0]
    for _ in range(40):
        p = rng.uniform(0.2, 0.8, 2)
        lr.observe(p, float(rng.normal()))
        d = lr.choose_price()
        assert 0.2 <= d.price <= 0.8 and d.bonus >= 0
    for _ in range(20):
        lr.observe(x, 0.0)
        now = lr.design.norms(x)[0]
        assert now <= prev + 1e-15
        prev = now


def test_context_requires_history():
    lr = _learner()
    with pytest.raises(RuntimeError):
        lr.choose_price()
    with pytest.raises(ValueError):
        lr.context([0.1, 0.2])
