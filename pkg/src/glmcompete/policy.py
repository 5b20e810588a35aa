"""PML-GLUCB pricing for a single seller.

A seller sees the public price vectors and *its own* demands only.  Each
round it re-estimates its parameter, then posts the grid maximizer of

    UCB(p_i) = p_i mu(<(p_i, p_-i), theta>) + rho * p_i * |(p_i, p_-i)|_{V^{-1}}

where ``p_-i`` are the rivals' prices from the previous round.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import DesignState, EstimateBundle, History, project_estimate, solve_pmle
from .market import LinkFunction


@dataclass(frozen=True)
class ConfidenceParams:
    delta: float
    horizon: int
    reg: float
    B_p: float
    B_theta: float
    L_mu: float
    c_mu: float
    n: int

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        for name in ("horizon", "reg", "B_p", "B_theta", "L_mu", "c_mu", "n"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def confidence_radius(params: ConfidenceParams, s: float) -> tuple[float, float]:
    """Self-normalized radius ``c_s`` and revenue-bonus multiplier ``rho_s``."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    c = params.L_mu * math.sqrt(
        2.0 * math.log(params.horizon / params.delta)
        + params.n * math.log1p(params.B_p ** 2 * s / (params.n * params.reg))
    )
    rho = 2.0 * params.L_mu / params.c_mu * (c + params.B_theta * math.sqrt(params.c_mu * params.reg))
    return c, rho


@dataclass
class Decision:
    price: float
    estimate: EstimateBundle
    rho: float
    bonus: float
    norm: float
    grid: np.ndarray
    est_revenue: np.ndarray
    grid_norms: np.ndarray


class SellerLearner:
    """One seller's PML-GLUCB state: history, design matrix and estimate.

    ``rho_override`` and ``fixed_theta`` exist for experiments that switch
    off exploration or estimation.
    """

    def __init__(self, index: int, n: int, link: LinkFunction, price_interval, radius: float,
                 params: ConfidenceParams, grid_size: int = 1001, reinvert_every: int | None = 1000,
                 rho_override: float | None = None, fixed_theta=None, capacity: int = 64):
        if grid_size < 2:
            raise ValueError("grid_size must be at least 2")
        self.index = index
        self.n = n
        self.link = link
        self.lo, self.hi = (float(v) for v in price_interval)
        self.radius = float(radius)
        self.params = params
        self.reg = params.reg
        self.grid = np.linspace(self.lo, self.hi, grid_size)
        self.grid[-1] = self.hi
        self.history = History(n, capacity)
        self.design = DesignState(n, params.reg, link.c_mu, reinvert_every)
        self.rho_override = rho_override
        self.fixed_theta = None if fixed_theta is None else np.asarray(fixed_theta, float)
        self._warm = np.zeros(n)
        self.last: Decision | None = None

    @property
    def round(self) -> int:
        return len(self.history)

    def observe(self, prices, demand: float) -> None:
        """Record the public price vector and this seller's own realized demand."""
        prices = np.asarray(prices, float)
        self.history.append(prices, float(demand))
        self.design.update(prices)

    def estimate(self) -> EstimateBundle:
        if self.fixed_theta is not None:
            th = self.fixed_theta.copy()
            return EstimateBundle(th, th, 0, 0.0, False, True)
        res = solve_pmle(self.history, self.link, self.reg, self._warm)
        self._warm = res.theta
        proj = project_estimate(res.theta, self.history, self.link, self.reg, self.design, self.radius)
        return EstimateBundle(res.theta, proj.theta, res.iterations, res.score_norm, proj.active,
                              res.converged and proj.converged)

    def rho(self) -> float:
        if self.rho_override is not None:
            return float(self.rho_override)
        return confidence_radius(self.params, max(self.round - 1, 0))[1]

    def context(self, p_minus_i_prev=None) -> np.ndarray:
        if p_minus_i_prev is None:
            if not len(self.history):
                raise RuntimeError("no previous price vector observed yet")
            return self.history.prices[-1].copy()
        ctx = np.insert(np.asarray(p_minus_i_prev, float), self.index, 0.0)
        if ctx.shape != (self.n,):
            raise ValueError(f"expected {self.n - 1} rival prices")
        return ctx

    def _candidates(self, prices, ctx):
        X = np.tile(ctx, (len(prices), 1))
        X[:, self.index] = prices
        return X

    def ucb_value(self, p_i: float, p_minus_i_prev=None, theta=None, rho=None) -> tuple[float, float]:
        """Plug-in revenue and exploration bonus at own price ``p_i``."""
        if not self.lo - 1e-12 <= p_i <= self.hi + 1e-12:
            raise ValueError(f"price {p_i} outside [{self.lo}, {self.hi}]")
        ctx = self.context(p_minus_i_prev)
        theta = self.estimate().theta if theta is None else np.asarray(theta, float)
        rho = self.rho() if rho is None else rho
        x = self._candidates(np.array([p_i]), ctx)
        est = float(p_i * self.link.mean(x @ theta)[0])
        bonus = float(rho * p_i * self.design.norms(x)[0])
        return est, bonus

    def choose_price(self, p_minus_i_prev=None) -> Decision:
        """Grid argmax of the UCB; ties go to the lowest price."""
        ctx = self.context(p_minus_i_prev)
        est = self.estimate()
        rho = self.rho()
        X = self._candidates(self.grid, ctx)
        est_rev = self.grid * self.link.mean(X @ est.theta)
        norms = self.design.norms(X)
        ucb = est_rev + rho * self.grid * norms
        k = int(np.argmax(ucb))
        price = float(self.grid[k])
        self.last = Decision(price, est, rho, float(rho * price * norms[k]), float(norms[k]),
                             self.grid, est_rev, norms)
        return self.last
