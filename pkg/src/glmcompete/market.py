"""Demand models for N competing sellers.

Each seller's expected demand is a known increasing link applied to a
linear price index, ``lambda_i(p) = mu_i(<theta_i, p>)``, where the i-th
coordinate of ``theta_i`` is the negated own-price sensitivity.  Realized
demand is drawn from the canonical exponential family matching the link:
unit-variance Gaussian for the identity-offset link and Bernoulli for the
logistic link.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

IDENTITY = "identity"
LOGISTIC = "logistic"
_KIND_ALIASES = {
    "identity": IDENTITY,
    "identity-offset": IDENTITY,
    "gaussian": IDENTITY,
    "linear": IDENTITY,
    "logistic": LOGISTIC,
    "bernoulli": LOGISTIC,
}

# |mu''| of the logistic link peaks at u = +/- log(2 + sqrt(3)).
_LOGISTIC_CURV_PEAK = float(np.log(2.0 + np.sqrt(3.0)))


class MarketError(ValueError):
    """Raised for malformed links, boxes or seller specifications."""


@dataclass(frozen=True)
class LinkFunction:
    """Canonical exponential-family link with curvature bounds on ``interval``.

    ``c_mu`` and ``B`` (demand ceiling) hold on the stated index interval,
    ``L_mu`` bounds ``mu'`` on the whole real line and ``B2`` bounds
    ``|mu''|`` on the interval.
    """

    kind: str
    interval: tuple[float, float]
    offset: float
    c_mu: float
    L_mu: float
    B: float
    B2: float

    def mean(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == IDENTITY:
            return self.offset + u
        return expit(u)

    def deriv(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == IDENTITY:
            return np.ones_like(u)
        m = expit(u)
        return m * (1.0 - m)

    def deriv2(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == IDENTITY:
            return np.zeros_like(u)
        m = expit(u)
        return m * (1.0 - m) * (1.0 - 2.0 * m)

    def log_partition(self, u):
        """The cumulant ``b`` with ``b' = mu``."""
        u = np.asarray(u, dtype=float)
        if self.kind == IDENTITY:
            return self.offset * u + 0.5 * u * u
        return np.logaddexp(0.0, u)

    @property
    def is_gaussian(self) -> bool:
        return self.kind == IDENTITY

    def grid(self, density: int = 1001) -> np.ndarray:
        lo, hi = self.interval
        return np.linspace(lo, hi, density)


def make_link(kind: str, params: dict | None, index_interval: Sequence[float]) -> LinkFunction:
    """Build a link and compute its bounds on ``index_interval``.

    ``params`` carries ``offset`` for the identity-offset link and is
    ignored for the logistic link.
    """
    try:
        kind = _KIND_ALIASES[kind.lower()]
    except KeyError:
        raise MarketError(f"unknown link kind {kind!r}") from None
    lo, hi = (float(v) for v in index_interval)
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise MarketError("index interval must be finite")
    if lo > hi:
        raise MarketError(f"inverted index interval [{lo}, {hi}]")
    params = dict(params or {})

    if kind == IDENTITY:
        offset = float(params.pop("offset", 0.0))
        if params:
            raise MarketError(f"unexpected identity-link parameters {sorted(params)}")
        if offset + lo < 0:
            raise MarketError(
                f"identity link with offset {offset} gives negative mean demand "
                f"{offset + lo} at the bottom of the index interval"
            )
        return LinkFunction(IDENTITY, (lo, hi), offset, c_mu=1.0, L_mu=1.0, B=offset + hi, B2=0.0)

    if params:
        raise MarketError(f"unexpected logistic-link parameters {sorted(params)}")
    ends = np.array([lo, hi])
    m = expit(ends)
    c_mu = float(np.min(m * (1 - m)))
    pts = [lo, hi] + [s * _LOGISTIC_CURV_PEAK for s in (-1, 1) if lo <= s * _LOGISTIC_CURV_PEAK <= hi]
    mp = expit(np.array(pts))
    B2 = float(np.max(np.abs(mp * (1 - mp) * (1 - 2 * mp))))
    return LinkFunction(LOGISTIC, (lo, hi), 0.0, c_mu=c_mu, L_mu=0.25, B=float(expit(hi)), B2=B2)


@dataclass(frozen=True)
class PriceBox:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise MarketError("price bounds must be equal-length 1-d sequences")
        if np.any(lo < 0):
            raise MarketError("price lower bounds must be nonnegative")
        if np.any(lo >= hi):
            raise MarketError("each price interval needs lower < upper")
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))

    @property
    def n(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def B_p(self) -> float:
        return float(np.sqrt(np.sum(self.hi ** 2)))

    @property
    def p_min(self) -> float:
        return min(self.lower)

    @property
    def p_max(self) -> float:
        return max(self.upper)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, p, atol: float = 1e-12) -> bool:
        p = np.asarray(p, float)
        return p.shape == (self.n,) and bool(np.all(p >= self.lo - atol) and np.all(p <= self.hi + atol))


@dataclass(frozen=True)
class ParamSpace:
    """Known parameter box of one seller: own-price sensitivity and rival box."""

    beta_bounds: tuple[float, float]
    gamma_bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        b_lo, b_hi = (float(v) for v in self.beta_bounds)
        if not 0 < b_lo <= b_hi:
            raise MarketError(f"beta bounds need 0 < lower <= upper, got {self.beta_bounds}")
        gb = tuple((float(a), float(b)) for a, b in self.gamma_bounds)
        if any(a > b for a, b in gb):
            raise MarketError("inverted cross-sensitivity bound")
        object.__setattr__(self, "beta_bounds", (b_lo, b_hi))
        object.__setattr__(self, "gamma_bounds", gb)

    @property
    def n(self) -> int:
        return len(self.gamma_bounds) + 1

    def theta_box(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate bounds of theta_i, with ``-beta`` at position ``i``."""
        lo = [g[0] for g in self.gamma_bounds]
        hi = [g[1] for g in self.gamma_bounds]
        lo.insert(i, -self.beta_bounds[1])
        hi.insert(i, -self.beta_bounds[0])
        return np.array(lo), np.array(hi)

    @property
    def radius(self) -> float:
        """Smallest l2 ball radius containing the box (attained at a corner)."""
        big = [max(abs(a), abs(b)) for a, b in self.gamma_bounds]
        return float(np.sqrt(self.beta_bounds[1] ** 2 + sum(v * v for v in big)))

    def contains(self, theta, i: int, atol: float = 1e-12) -> bool:
        lo, hi = self.theta_box(i)
        theta = np.asarray(theta, float)
        return bool(np.all(theta >= lo - atol) and np.all(theta <= hi + atol))


def index_bounds(param_space: ParamSpace, price_box: PriceBox, i: int) -> tuple[float, float]:
    """Exact range of ``<theta, p>`` over the parameter box times the price box."""
    if param_space.n != price_box.n:
        raise MarketError("parameter box and price box dimensions differ")
    t_lo, t_hi = param_space.theta_box(i)
    prods = np.stack([t_lo * price_box.lo, t_lo * price_box.hi, t_hi * price_box.lo, t_hi * price_box.hi])
    return float(prods.min(axis=0).sum()), float(prods.max(axis=0).sum())


def index_bounds_bruteforce(param_space: ParamSpace, price_box: PriceBox, i: int) -> tuple[float, float]:
    """Enumerate all joint corners; exponential in N, for cross-checking."""
    t_lo, t_hi = param_space.theta_box(i)
    vals = [
        float(np.dot(th, p))
        for th in itertools.product(*zip(t_lo, t_hi))
        for p in itertools.product(*zip(price_box.lo, price_box.hi))
    ]
    return min(vals), max(vals)


@dataclass(frozen=True)
class SellerSpec:
    index: int
    theta: tuple[float, ...]
    link: LinkFunction
    price_box: PriceBox
    param_space: ParamSpace

    def __post_init__(self):
        theta = tuple(float(v) for v in self.theta)
        object.__setattr__(self, "theta", theta)
        if len(theta) != self.price_box.n:
            raise MarketError(f"seller {self.index}: theta has length {len(theta)}, expected {self.price_box.n}")
        if theta[self.index] >= 0:
            raise MarketError(f"seller {self.index}: own-price coefficient must be negative")
        if not self.param_space.contains(theta, self.index):
            raise MarketError(f"seller {self.index}: true parameter lies outside its parameter box")

    @property
    def theta_arr(self) -> np.ndarray:
        return np.array(self.theta)

    @property
    def beta(self) -> float:
        return -self.theta[self.index]

    @property
    def gamma(self) -> np.ndarray:
        return np.delete(self.theta_arr, self.index)

    @property
    def radius(self) -> float:
        return self.param_space.radius

    @property
    def price_interval(self) -> tuple[float, float]:
        return self.price_box.lower[self.index], self.price_box.upper[self.index]


def make_seller(
    index: int,
    beta: float,
    gamma: Sequence[float],
    price_box: PriceBox,
    link: str = IDENTITY,
    link_params: dict | None = None,
    beta_bounds: Sequence[float] | None = None,
    gamma_bounds: Sequence[Sequence[float]] | None = None,
) -> SellerSpec:
    """Assemble a seller; missing parameter bounds collapse to the true values."""
    gamma = [float(g) for g in gamma]
    if len(gamma) != price_box.n - 1:
        raise MarketError(f"seller {index}: expected {price_box.n - 1} cross sensitivities, got {len(gamma)}")
    space = ParamSpace(
        tuple(beta_bounds) if beta_bounds is not None else (beta, beta),
        tuple(tuple(g) for g in gamma_bounds) if gamma_bounds is not None else tuple((g, g) for g in gamma),
    )
    theta = list(gamma)
    theta.insert(index, -float(beta))
    U = index_bounds(space, price_box, index)
    return SellerSpec(index, tuple(theta), make_link(link, link_params, U), price_box, space)


@dataclass(frozen=True)
class MarketConfig:
    sellers: tuple[SellerSpec, ...]
    horizon: int
    noise: str = "independent"
    noise_cov: tuple[tuple[float, ...], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        sellers = tuple(self.sellers)
        object.__setattr__(self, "sellers", sellers)
        if not sellers:
            raise MarketError("need at least one seller")
        box = sellers[0].price_box
        for k, s in enumerate(sellers):
            if s.index != k:
                raise MarketError(f"seller at position {k} has index {s.index}")
            if s.price_box != box:
                raise MarketError("all sellers must share one price box")
        if box.n != len(sellers):
            raise MarketError(f"price box has {box.n} coordinates for {len(sellers)} sellers")
        if int(self.horizon) < 0:
            raise MarketError("horizon must be nonnegative")
        object.__setattr__(self, "horizon", int(self.horizon))
        if self.noise not in ("independent", "correlated"):
            raise MarketError(f"unknown noise mode {self.noise!r}")
        if self.noise == "correlated":
            if not all(s.link.is_gaussian for s in sellers):
                raise MarketError("correlated noise is only available when every seller has Gaussian demand")
            if self.noise_cov is None:
                raise MarketError("correlated noise needs noise_cov")
            cov = np.asarray(self.noise_cov, float)
            if cov.shape != (box.n, box.n) or not np.allclose(cov, cov.T):
                raise MarketError("noise_cov must be a symmetric N x N matrix")
            if not np.allclose(np.diag(cov), 1.0):
                raise MarketError("noise_cov must have unit diagonal (unit-dispersion Gaussian demand)")
            if np.linalg.eigvalsh(cov).min() < -1e-12:
                raise MarketError("noise_cov must be positive semidefinite")
            object.__setattr__(self, "noise_cov", tuple(tuple(float(v) for v in row) for row in cov))

    @property
    def n(self) -> int:
        return len(self.sellers)

    @property
    def price_box(self) -> PriceBox:
        return self.sellers[0].price_box

    @property
    def thetas(self) -> np.ndarray:
        return np.array([s.theta for s in self.sellers])


def eval_mean_demand(spec: SellerSpec, p) -> float:
    p = np.asarray(p, float)
    if not spec.price_box.contains(p):
        raise MarketError(f"price vector {p} lies outside the price box")
    return float(spec.link.mean(np.dot(spec.theta_arr, p)))


def sample_demand(spec: SellerSpec, p, rng: np.random.Generator) -> float:
    mean = eval_mean_demand(spec, p)
    if spec.link.is_gaussian:
        return mean + float(rng.standard_normal())
    return float(rng.random() < mean)


def noise_factor(config: MarketConfig) -> np.ndarray | None:
    """Cholesky-like factor of the Gaussian noise covariance, if correlated."""
    if config.noise != "correlated":
        return None
    cov = np.asarray(config.noise_cov)
    w, Q = np.linalg.eigh(cov)
    return Q * np.sqrt(np.clip(w, 0.0, None))


def sample_demands(config: MarketConfig, p, rng: np.random.Generator, factor: np.ndarray | None = None) -> np.ndarray:
    """Joint demand draw for all sellers at one price vector."""
    p = np.asarray(p, float)
    means = np.array([float(s.link.mean(np.dot(s.theta_arr, p))) for s in config.sellers])
    if config.noise == "correlated":
        if factor is None:
            factor = noise_factor(config)
        return means + factor @ rng.standard_normal(config.n)
    y = np.empty(config.n)
    for k, s in enumerate(config.sellers):
        if s.link.is_gaussian:
            y[k] = means[k] + rng.standard_normal()
        else:
            y[k] = float(rng.random() < means[k])
    return y


@dataclass
class ValidationReport:
    flags: dict[str, bool]
    index_intervals: list[tuple[float, float]]
    mu_prime_min: list[float]
    mu_prime_max: list[float]
    demand_min: list[float]
    demand_max: list[float]
    xi_hat: list[float]
    L_gamma: float
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.flags.values())

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "flags": dict(self.flags),
            "index_intervals": [list(u) for u in self.index_intervals],
            "mu_prime_min": self.mu_prime_min,
            "mu_prime_max": self.mu_prime_max,
            "demand_min": self.demand_min,
            "demand_max": self.demand_max,
            "xi_hat": self.xi_hat,
            "L_gamma": self.L_gamma,
            "messages": list(self.messages),
        }


def contraction_constant_of(config: MarketConfig) -> float:
    return max(float(np.sum(np.abs(s.gamma))) / s.beta for s in config.sellers)


def _rival_index_range(spec: SellerSpec) -> tuple[float, float]:
    box = spec.price_box
    g = spec.theta_arr.copy()
    g[spec.index] = 0.0
    a, b = g * box.lo, g * box.hi
    return float(np.minimum(a, b).sum()), float(np.maximum(a, b).sum())


def revenue_curvature(spec: SellerSpec, p_own, rival_index):
    """Second derivative of ``p * mu(-beta p + c)`` in the own price."""
    beta = spec.beta
    u = -beta * np.asarray(p_own) + np.asarray(rival_index)
    return -2.0 * beta * spec.link.deriv(u) + beta ** 2 * np.asarray(p_own) * spec.link.deriv2(u)


def validate_market(config: MarketConfig, grid_density: int = 101) -> ValidationReport:
    """Check the modelling assumptions on grids; never raises.

    Revenue curvature and demand depend on the rivals only through the
    scalar ``c = <gamma, p_-i>``, so the rival grid is taken over the exact
    range of ``c`` rather than over the (N-1)-dimensional box.
    """
    flags = {
        "price_box": True,
        "parameter_box": True,
        "link_bounds": True,
        "demand_nonnegative": True,
        "strong_concavity": True,
        "log_concavity": True,
        "contraction": True,
    }
    msgs: list[str] = []
    intervals, dmin, dmax, mmin, mmax, xis = [], [], [], [], [], []
    box = config.price_box
    if box.B_p <= 0:
        flags["price_box"] = False
        msgs.append("price box: B_p must be positive")

    for s in config.sellers:
        i = s.index
        if not s.param_space.contains(s.theta, i) or np.linalg.norm(s.theta) > s.radius + 1e-12:
            flags["parameter_box"] = False
            msgs.append(f"seller {i}: true parameter outside its parameter box")
        U = index_bounds(s.param_space, box, i)
        intervals.append(U)
        u = np.linspace(U[0], U[1], max(grid_density, 2) * 10)
        mp = s.link.deriv(u)
        m = s.link.mean(u)
        mmin.append(float(mp.min()))
        mmax.append(float(mp.max()))
        eps = 1e-12
        if mp.min() < s.link.c_mu - eps or mp.max() > s.link.L_mu + eps or m.min() < -eps or m.max() > s.link.B + eps:
            flags["link_bounds"] = False
            msgs.append(f"seller {i}: link bounds fail on the index interval {U}")
        if np.any(u < s.link.interval[0] - 1e-9) or np.any(u > s.link.interval[1] + 1e-9):
            flags["link_bounds"] = False
            msgs.append(f"seller {i}: link bounds were computed on a narrower interval than {U}")
        # log-concavity: mu mu'' - mu'^2 <= 0
        if np.any(m * s.link.deriv2(u) - mp ** 2 > 1e-12):
            flags["log_concavity"] = False
            msgs.append(f"seller {i}: link is not log-concave on its index interval")

        lo, hi = s.price_interval
        c_lo, c_hi = _rival_index_range(s)
        P, C = np.meshgrid(np.linspace(lo, hi, grid_density), np.linspace(c_lo, c_hi, grid_density))
        dem = s.link.mean(-s.beta * P + C)
        dmin.append(float(dem.min()))
        dmax.append(float(dem.max()))
        if dem.min() < -1e-12:
            flags["demand_nonnegative"] = False
            msgs.append(f"seller {i}: mean demand negative somewhere on the price box (min {dem.min():.4g})")
        xi = float(np.min(-revenue_curvature(s, P, C)))
        xis.append(xi)
        if xi <= 0:
            flags["strong_concavity"] = False
            msgs.append(f"seller {i}: revenue is not strongly concave in own price (grid min curvature {xi:.4g})")

    L = contraction_constant_of(config)
    if L >= 1:
        flags["contraction"] = False
        msgs.append(
            f"assumption violated: best-response contraction needs L_gamma = max_i |gamma_i|_1 / beta_i < 1, "
            f"got {L:.6g}; a unique equilibrium is not guaranteed"
        )
    return ValidationReport(flags, intervals, mmin, mmax, dmin, dmax, xis, L, msgs)
