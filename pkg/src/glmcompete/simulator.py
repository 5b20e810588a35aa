"""Round loop of the N-seller market and trajectory metrics."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .market import MarketConfig, noise_factor, sample_demands
from .oracle import MarketOracle, NashResult
from .policy import ConfidenceParams, SellerLearner

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolicyConfig:
    reg: float = 1.0
    delta_exponent: float = 2.0
    delta: float | None = None
    grid_size: int = 1001
    tol_br: float = 1e-10
    initial_prices: str = "midpoint"
    reinvert_every: int | None = 1000

    def delta_for(self, horizon: int) -> float:
        if self.delta is not None:
            return float(self.delta)
        # the horizon-1 case would give delta = 1; keep it inside (0, 1)
        return min(1.0 / max(horizon, 1) ** self.delta_exponent, 0.5)


def config_digest(config: MarketConfig, policy: PolicyConfig) -> str:
    blob = json.dumps({"market": market_to_dict(config), "policy": asdict(policy)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def market_to_dict(config: MarketConfig) -> dict:
    return {
        "horizon": config.horizon,
        "noise": config.noise,
        "noise_cov": None if config.noise_cov is None else [list(r) for r in config.noise_cov],
        "sellers": [
            {
                "link": s.link.kind,
                "offset": s.link.offset,
                "theta": list(s.theta),
                "price_bounds": list(s.price_interval),
                "beta_bounds": list(s.param_space.beta_bounds),
                "gamma_bounds": [list(g) for g in s.param_space.gamma_bounds],
            }
            for s in config.sellers
        ],
    }


@dataclass
class RoundRecord:
    t: int
    prices: np.ndarray
    demands: np.ndarray
    thetas: np.ndarray
    bonus: np.ndarray
    bonus_norm: np.ndarray
    regret: np.ndarray


@dataclass
class Trajectory:
    """Rounds ``0..T`` stored column-wise; round 0 is the initial posting."""

    config_hash: str
    seed: int
    prices: np.ndarray
    demands: np.ndarray
    thetas: np.ndarray
    bonus: np.ndarray
    bonus_norm: np.ndarray
    regret: np.ndarray
    ridge: np.ndarray
    p_lower: float
    nash: NashResult | None = None
    warnings: int = 0

    @property
    def horizon(self) -> int:
        return len(self.prices) - 1

    @property
    def n(self) -> int:
        return self.prices.shape[1]

    def record(self, t: int) -> RoundRecord:
        return RoundRecord(t, self.prices[t], self.demands[t], self.thetas[t], self.bonus[t],
                           self.bonus_norm[t], self.regret[t])

    @property
    def records(self) -> list[RoundRecord]:
        return [self.record(t) for t in range(len(self.prices))]

    def cumulative_regret(self) -> np.ndarray:
        """``Reg_i(t)`` for t = 0..T; round 0 is not part of the sum."""
        r = self.regret.copy()
        r[0] = 0.0
        return np.cumsum(r, axis=0)

    def dist_to_nash_sq(self) -> np.ndarray:
        if self.nash is None:
            raise ValueError("trajectory carries no equilibrium")
        return np.sum((self.prices - self.nash.price) ** 2, axis=1)

    def k_statistic(self) -> float:
        """Sum over rounds 1..T and sellers of the UCB feature norm actually played."""
        return float(self.bonus_norm[1:].sum())


def k_statistic_dense(prices, ridge) -> float:
    """K(T) recomputed with fresh dense solves; independent of the running inverse."""
    prices = np.asarray(prices, float)
    T = len(prices) - 1
    n = prices.shape[1]
    total = 0.0
    for j in range(n):
        V = ridge[j] * np.eye(n)
        for t in range(T):
            V = V + np.outer(prices[t], prices[t])
            x = prices[t].copy()
            x[j] = prices[t + 1, j]
            total += math.sqrt(x @ np.linalg.solve(V, x))
    return total


def elliptical_bound_value(n: int, reg: float, horizon: int) -> float:
    T = horizon
    return n / math.sqrt(reg) + n * math.sqrt(reg + T) + n ** 1.5 * math.sqrt(T * math.log(T / (n * reg) + 1))


@dataclass
class Metrics:
    regret: list[float]
    nash_dist_sum: float
    K_T: float
    K_bound: float
    K_ratio: float
    terminal_dist: float
    regret_curve: np.ndarray = field(repr=False)
    dist_curve: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "regret": self.regret,
            "nash_dist_sum": self.nash_dist_sum,
            "K_T": self.K_T,
            "K_bound": self.K_bound,
            "K_ratio": self.K_ratio,
            "terminal_dist": self.terminal_dist,
        }


def compute_metrics(traj: Trajectory, reg: float) -> Metrics:
    cum = traj.cumulative_regret()
    d = traj.dist_to_nash_sq()
    dist_curve = np.cumsum(np.concatenate([[0.0], d[1:]]))
    T = traj.horizon
    K = traj.k_statistic()
    bound = elliptical_bound_value(traj.n, reg, T) if T > 0 else float("nan")
    return Metrics(
        regret=[float(v) for v in cum[-1]],
        nash_dist_sum=float(dist_curve[-1]),
        K_T=K,
        K_bound=bound,
        K_ratio=K / bound if T > 0 else float("nan"),
        terminal_dist=float(math.sqrt(d[-1])),
        regret_curve=cum,
        dist_curve=dist_curve,
    )


class Episode:
    """One seeded run of the market; ``step`` plays one round."""

    def __init__(self, config: MarketConfig, policy: PolicyConfig, seed: int, horizon: int | None = None,
                 oracle: MarketOracle | None = None, nash: NashResult | None = None,
                 rho_override: float | None = None, fixed_thetas=None, record_regret: bool = True):
        self.config = config
        self.policy = policy
        self.seed = int(seed)
        self.T = config.horizon if horizon is None else int(horizon)
        self.rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.T]))
        self.oracle = oracle if oracle is not None or not record_regret else MarketOracle(config, policy.tol_br)
        self.record_regret = record_regret
        self.nash = nash
        if record_regret and nash is None:
            self.nash = self.oracle.nash_equilibrium()
        self._factor = noise_factor(config)
        box = config.price_box
        delta = policy.delta_for(self.T)
        self.learners = []
        for s in config.sellers:
            params = ConfidenceParams(delta, max(self.T, 1), policy.reg, box.B_p, s.radius,
                                      s.link.L_mu, s.link.c_mu, config.n)
            fixed = None if fixed_thetas is None else fixed_thetas[s.index]
            self.learners.append(SellerLearner(
                s.index, config.n, s.link, s.price_interval, s.radius, params,
                grid_size=policy.grid_size, reinvert_every=policy.reinvert_every,
                rho_override=rho_override, fixed_theta=fixed, capacity=self.T + 1,
            ))
        n, T = config.n, self.T
        self.prices = np.zeros((T + 1, n))
        self.demands = np.zeros((T + 1, n))
        self.thetas = np.zeros((T + 1, n, n))
        self.bonus = np.zeros((T + 1, n))
        self.bonus_norm = np.zeros((T + 1, n))
        self.regret = np.zeros((T + 1, n))
        self.t = -1
        self.warnings = 0

    def _publish(self, p, y) -> None:
        # each learner receives the public prices and only its own demand
        for learner in self.learners:
            learner.observe(p, y[learner.index])

    def _finish_round(self, p, y) -> None:
        t = self.t
        self.prices[t] = p
        self.demands[t] = y
        if self.record_regret:
            self.regret[t] = self.oracle.instantaneous_regret(p)

    def start(self) -> None:
        box = self.config.price_box
        if self.policy.initial_prices == "midpoint":
            p0 = box.midpoint
        elif self.policy.initial_prices == "uniform":
            p0 = self.rng.uniform(box.lo, box.hi)
        else:
            raise ValueError(f"unknown initial_prices {self.policy.initial_prices!r}")
        self.t = 0
        y0 = sample_demands(self.config, p0, self.rng, self._factor)
        for s in self.config.sellers:
            lo, hi = s.param_space.theta_box(s.index)
            self.thetas[0, s.index] = 0.5 * (lo + hi)
        self._publish(p0, y0)
        self._finish_round(p0, y0)

    def step(self):
        """Estimate, price, draw demand, publish, update (in that order)."""
        if self.t < 0:
            self.start()
            return None
        self.t += 1
        t = self.t
        decisions = [learner.choose_price() for learner in self.learners]
        p = np.array([d.price for d in decisions])
        y = sample_demands(self.config, p, self.rng, self._factor)
        self._publish(p, y)
        for k, d in enumerate(decisions):
            self.thetas[t, k] = d.estimate.theta
            self.bonus[t, k] = d.bonus
            self.bonus_norm[t, k] = d.norm
            if not d.estimate.converged:
                self.warnings += 1
        self._finish_round(p, y)
        return decisions

    def run(self) -> Trajectory:
        if self.t < 0:
            self.start()
        while self.t < self.T:
            self.step()
        if self.warnings:
            logger.warning("seed %d: %d estimator calls did not converge", self.seed, self.warnings)
        return self.trajectory()

    def trajectory(self) -> Trajectory:
        ridge = np.array([lr.design.ridge for lr in self.learners])
        return Trajectory(
            config_hash=config_digest(self.config, self.policy), seed=self.seed,
            prices=self.prices[: self.t + 1].copy(), demands=self.demands[: self.t + 1].copy(),
            thetas=self.thetas[: self.t + 1].copy(), bonus=self.bonus[: self.t + 1].copy(),
            bonus_norm=self.bonus_norm[: self.t + 1].copy(), regret=self.regret[: self.t + 1].copy(),
            ridge=ridge, p_lower=self.config.price_box.p_min, nash=self.nash, warnings=self.warnings,
        )


def run_round(episode: Episode):
    return episode.step()


def run_episode(config: MarketConfig, policy: PolicyConfig, seed: int, horizon: int | None = None,
                oracle: MarketOracle | None = None, nash: NashResult | None = None, **kwargs) -> Trajectory:
    return Episode(config, policy, seed, horizon, oracle, nash, **kwargs).run()
