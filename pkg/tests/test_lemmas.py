import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear_market
from glmcompete import lemmas
from glmcompete.market import make_link
from glmcompete.oracle import MarketOracle
from glmcompete.simulator import PolicyConfig, Trajectory


def _double_sum(a, q):
    T = len(a)
    return sum(sum(q ** j * a[t - j - 1] for j in range(t)) ** 2 for t in range(1, T + 1))


def test_summation_impulse_closed_form():
    q, T = 0.7, 30
    rep = lemmas.check_summation_inequality([1.0] + [0.0] * (T - 1), q)
    assert rep.lhs == pytest.approx((1 - q ** (2 * T)) / (1 - q ** 2))
    assert rep.rhs == pytest.approx(1 / (1 - q) ** 2) and rep.passed


def test_summation_zero_sequence():
    rep = lemmas.check_summation_inequality(np.zeros(10), 0.5)
    assert rep.lhs == 0 and rep.rhs == 0 and rep.passed


@pytest.mark.parametrize("q", [0.0, 1.0, -0.2, 1.5])
def test_summation_rejects_bad_q(q):
    with pytest.raises(ValueError):
        lemmas.check_summation_inequality([1.0], q)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40), st.sampled_from([0.1, 0.5, 0.9]))
def test_summation_property(a, q):
    rep = lemmas.check_summation_inequality(a, q)
    assert rep.passed and rep.recheck()
    assert rep.lhs == pytest.approx(_double_sum(a, q), rel=1e-9, abs=1e-9)


def _traj(P, ridge, p_low, seed=0):
    P = np.asarray(P, float)
    T1, n = P.shape
    z = np.zeros((T1, n))
    return Trajectory("x", seed, P, z, np.zeros((T1, n, n)), z, z + 0.1, z, np.asarray(ridge, float), p_low)


def test_inverse_diagonals_start_at_ridge():
    diag = lemmas.design_inverse_diagonals(np.ones((3, 2)), [2.0, 4.0])
    assert diag[0] == pytest.approx([0.5, 0.25])


def test_inverse_diagonals_constant_path_closed_form():
    # V = I + t 11^T has inverse diagonal (1 + t) / (1 + 2t)
    T = 20
    diag = lemmas.design_inverse_diagonals(np.ones((T + 1, 2)), [1.0, 1.0])
    t = np.arange(T + 1)
    assert np.allclose(diag[:, 0], (1 + t) / (1 + 2 * t))


def test_inverse_diagonals_match_dense():
    rng = np.random.default_rng(0)
    P = rng.uniform(0.5, 1.5, (30, 3))
    diag = lemmas.design_inverse_diagonals(P, [1.0, 2.0, 3.0])
    for t in (0, 7, 29):
        for j, r in enumerate((1.0, 2.0, 3.0)):
            V = r * np.eye(3) + P[:t].T @ P[:t]
            assert diag[t, j] == pytest.approx(np.linalg.inv(V)[j, j])


def test_elliptical_degenerate_floor_reported_not_failed():
    rep = lemmas.check_elliptical_bound(_traj(np.ones((5, 2)) * 0.5, [1.0, 1.0], 0.0))
    assert rep.passed and "degenerate" in rep.details


def test_elliptical_single_seller_holds():
    # with one coordinate the inequality is exact algebra: 1 / (ridge + sum p^2)
    rng = np.random.default_rng(1)
    rep = lemmas.check_elliptical_bound(_traj(rng.uniform(0.3, 1.0, (50, 1)), [1.0], 0.3))
    assert rep.passed, rep


def test_elliptical_flags_constant_two_seller_path():
    rep = lemmas.check_elliptical_bound(_traj(np.ones((11, 2)), [1.0, 1.0], 1.0))
    assert not rep.passed and not rep.recheck()
    assert rep.details["violation_rounds"] == 10


def test_exact_mgf_values():
    g = make_link("identity", {"offset": 1.0}, (-1.0, 1.0))
    b = make_link("logistic", None, (-1.0, 1.0))
    assert lemmas.exact_mgf(g, 0.0, 1.0) == pytest.approx(math.exp(0.5))
    assert lemmas.exact_mgf(b, 0.0, 1.0) == pytest.approx(math.cosh(0.5))
    assert math.cosh(0.5) == pytest.approx(1.12763, abs=1e-5) and math.cosh(0.5) <= math.exp(0.125)
    assert lemmas.exact_mgf(b, 0.3, 0.0) == pytest.approx(1.0)
    lam = np.linspace(-2, 2, 41)
    for u in np.linspace(-1, 1, 9):
        assert np.all(lemmas.exact_mgf(b, u, lam) <= np.exp(0.125 * lam ** 2) + 1e-15)


def test_mgf_check_both_links():
    rng = np.random.default_rng(3)
    lam = np.linspace(-2, 2, 9)
    for link, u in ((make_link("identity", {"offset": 2.0}, (-1, 1)), 0.5), (make_link("logistic", None, (-2, 2)), -2.0)):
        rep = lemmas.check_subgaussian_mgf(link, u, lam, 50_000, rng)
        assert rep.passed and rep.recheck()
        assert np.allclose(rep.details["mc"][lam == 0], 1.0)


def test_mgf_check_input_validation():
    rng = np.random.default_rng(0)
    link = make_link("logistic", None, (-1, 1))
    with pytest.raises(ValueError):
        lemmas.check_subgaussian_mgf(link, 0.0, [3.0], 10, rng)
    with pytest.raises(ValueError):
        lemmas.check_subgaussian_mgf(link, 5.0, [1.0], 10, rng)


def test_coverage_extremes():
    market = linear_market(horizon=30)
    pol = PolicyConfig(delta=0.05)
    wide = lemmas.check_concentration_coverage(market, pol, 20, rho_check=math.inf)
    assert wide.lhs == 0.0 and wide.passed
    zero = lemmas.check_concentration_coverage(market, pol, 20, rho_check=0.0)
    assert zero.lhs == 1.0 and not zero.passed


def test_contraction_examples():
    rng = np.random.default_rng(0)
    dec = MarketOracle(linear_market(gamma=0.0, gamma_bounds=(0.0, 0.0)))
    rep = lemmas.check_contraction(dec, 200, rng)
    assert rep.lhs <= 1e-12 and rep.passed
    sym = lemmas.check_contraction(MarketOracle(linear_market()), 500, rng)
    # interior responses move with slope gamma / (2 beta)
    assert sym.details["max_ratio"] == pytest.approx(0.15, abs=1e-9)


def test_report_json_roundtrip():
    rep = lemmas.check_summation_inequality([1.0, 2.0], 0.5)
    d = json.loads(rep.to_json())
    assert d["passed"] == (d["lhs"] <= d["rhs"] + d["tolerance"])
    assert d["margin"] == pytest.approx(d["rhs"] + d["tolerance"] - d["lhs"])


def test_summation_suite_counts():
    reps = lemmas.summation_suite(np.random.default_rng(0), 50, qs=(0.5,), max_len=20)
    assert len(reps) == 1 and reps[0].details["instances"] == 50 and reps[0].passed
