import numpy as np
import pytest

from glmcompete.market import MarketConfig, PriceBox, make_seller

_CRITERIA: dict[int, list[tuple[str, bool, str]]] = {}


def record_criterion(number: int, name: str, passed: bool, detail: str = "") -> None:
    _CRITERIA.setdefault(number, []).append((name, bool(passed), detail))


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        parts = _CRITERIA[number]
        ok = all(p for _, p, _ in parts)
        tr.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}")
        for name, p, detail in parts:
            tr.write_line(f"    {'pass' if p else 'FAIL'}  {name}: {detail}")


def linear_market(alpha=1.0, beta=1.0, gamma=0.3, n=2, horizon=100, lo=0.0, hi=1.0,
                  beta_bounds=(0.5, 1.0), gamma_bounds=(0.0, 0.5), **kw) -> MarketConfig:
    box = PriceBox((lo,) * n, (hi,) * n)
    sellers = tuple(
        make_seller(i, beta, [gamma] * (n - 1), box, "identity", {"offset": alpha},
                    beta_bounds, [gamma_bounds] * (n - 1))
        for i in range(n)
    )
    return MarketConfig(sellers, horizon, **kw)


def logistic_market(horizon=100) -> MarketConfig:
    box = PriceBox((0.1, 0.1), (1.5, 1.5))
    sellers = (
        make_seller(0, 1.0, [0.4], box, "logistic", None, (0.5, 1.5), [(0.0, 0.8)]),
        make_seller(1, 0.8, [0.3], box, "logistic", None, (0.4, 1.2), [(0.0, 0.6)]),
    )
    return MarketConfig(sellers, horizon)


@pytest.fixture
def sym_market():
    return linear_market()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
