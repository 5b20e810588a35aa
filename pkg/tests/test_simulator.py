import numpy as np
import pytest

from conftest import linear_market, logistic_market
from glmcompete.oracle import MarketOracle
from glmcompete.simulator import (
    Episode,
    PolicyConfig,
    Trajectory,
    compute_metrics,
    elliptical_bound_value,
    k_statistic_dense,
    run_episode,
)


def test_zero_horizon():
    tr = run_episode(linear_market(horizon=0), PolicyConfig(), 0)
    assert tr.horizon == 0 and tr.prices.shape == (1, 2)
    assert np.allclose(tr.prices[0], 0.5)


def test_determinism_bitwise():
    a = run_episode(logistic_market(horizon=40), PolicyConfig(), 7)
    b = run_episode(logistic_market(horizon=40), PolicyConfig(), 7)
    for name in ("prices", "demands", "thetas", "bonus", "regret"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    c = run_episode(logistic_market(horizon=40), PolicyConfig(), 8)
    assert not np.array_equal(a.demands, c.demands)


def test_pinned_policy_follows_picard_iteration():
    market = linear_market(horizon=30)
    G = 1001
    ep = Episode(market, PolicyConfig(grid_size=G), 0, rho_override=0.0, fixed_thetas=market.thetas)
    tr = ep.run()
    orc = MarketOracle(market)
    for t in range(1, 31):
        target = orc.best_response_batch(tr.prices[t - 1])
        assert np.all(np.abs(tr.prices[t] - target) <= 0.5 / (G - 1) + 1e-12)
    assert np.allclose(tr.prices[-1], 0.5 / 0.85, atol=1e-3)


def test_round_order_and_histories():
    market = linear_market(horizon=5)
    ep = Episode(market, PolicyConfig(), 3)
    ep.start()
    assert all(len(lr.history) == 1 for lr in ep.learners)
    decisions = ep.step()
    assert len(decisions) == 2 and ep.t == 1
    assert all(len(lr.history) == 2 for lr in ep.learners)
    assert all(np.array_equal(lr.history.prices[-1], ep.prices[1]) for lr in ep.learners)


def test_regret_nondecreasing_and_metrics():
    market = logistic_market(horizon=50)
    tr = run_episode(market, PolicyConfig(), 2)
    cum = tr.cumulative_regret()
    assert np.all(np.diff(cum, axis=0) >= -1e-14)
    m = compute_metrics(tr, 1.0)
    assert m.regret == pytest.approx(cum[-1].tolist())
    assert m.K_T == pytest.approx(k_statistic_dense(tr.prices, tr.ridge), abs=1e-8)


def test_metrics_on_equilibrium_path():
    market = linear_market(horizon=10)
    nash = MarketOracle(market).nash_equilibrium()
    T = 10
    P = np.tile(nash.price, (T + 1, 1))
    reg = MarketOracle(market).instantaneous_regret(nash.price)
    tr = Trajectory("x", 0, P, np.zeros_like(P), np.zeros((T + 1, 2, 2)), np.zeros_like(P), np.zeros_like(P),
                    np.tile(reg, (T + 1, 1)), np.ones(2), 0.0, nash)
    m = compute_metrics(tr, 1.0)
    assert max(m.regret) <= 1e-8 and m.nash_dist_sum <= 1e-18


def test_elliptical_bound_value():
    v = elliptical_bound_value(2, 1.0, 100)
    assert v == pytest.approx(2 + 2 * np.sqrt(101) + 2 ** 1.5 * np.sqrt(100 * np.log(51)))


def test_correlated_noise_and_uniform_start():
    market = linear_market(horizon=20, noise="correlated", noise_cov=((1.0, 0.9), (0.9, 1.0)))
    tr = run_episode(market, PolicyConfig(initial_prices="uniform"), 1)
    assert tr.prices.shape == (21, 2) and not np.allclose(tr.prices[0], 0.5)
    with pytest.raises(ValueError):
        run_episode(market, PolicyConfig(initial_prices="random"), 1)


def test_delta_default():
    assert PolicyConfig().delta_for(100) == pytest.approx(1e-4)
    assert PolicyConfig(delta_exponent=1.5).delta_for(100) == pytest.approx(1e-3)
    assert PolicyConfig().delta_for(1) == 0.5
    assert PolicyConfig(delta=0.05).delta_for(10) == 0.05
