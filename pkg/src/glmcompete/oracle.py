"""Ground truth: revenues, best responses, Nash equilibrium and regret."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .market import MarketConfig, MarketError, contraction_constant_of, validate_market

logger = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
INV_PHI2 = (3.0 - math.sqrt(5.0)) / 2.0


class ConcavityError(MarketError):
    """Revenue is not concave in own price where the maximizer was found."""


def golden_section_max(f, a, b, tol):
    """Vectorized golden-section search for the maximum of a unimodal ``f``.

    ``a``, ``b`` are arrays of interval ends, ``f`` maps an array of points
    (one per interval) to values.  Returns the final bracket ``(a, b)``;
    the iteration count is fixed by the widest interval and ``tol``.
    """
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    h = b - a
    width = float(np.max(h)) if h.size else 0.0
    if width <= tol:
        return a, b
    n = int(math.ceil(math.log(tol / width) / math.log(INV_PHI)))
    c = a + INV_PHI2 * h
    d = a + INV_PHI * h
    fc, fd = f(c), f(d)
    for _ in range(n - 1):
        left = fc > fd
        # keep [a, d] where the left probe wins, [c, b] otherwise
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        h = b - a
        c, d = np.where(left, a + INV_PHI2 * h, d), np.where(left, c, a + INV_PHI * h)
        fp = f(np.where(left, c, d))
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
    left = fc > fd
    return np.where(left, a, c), np.where(left, d, b)


class _LinkBank:
    """Evaluates each row's own link on a flat array of indices."""

    def __init__(self, links):
        self.logistic = np.array([lk.kind == "logistic" for lk in links])
        self.offset = np.array([lk.offset for lk in links])

    def take(self, idx):
        bank = object.__new__(_LinkBank)
        bank.logistic = self.logistic[idx]
        bank.offset = self.offset[idx]
        return bank

    def mean(self, u):
        return np.where(self.logistic, expit(u), self.offset + u)

    def derivs(self, u):
        m = expit(u)
        d1 = m * (1 - m)
        d2 = d1 * (1 - 2 * m)
        mean = np.where(self.logistic, m, self.offset + u)
        return mean, np.where(self.logistic, d1, 1.0), np.where(self.logistic, d2, 0.0)


@dataclass
class NashResult:
    price: np.ndarray
    iterations: int
    residual: float
    error_bound: float
    converged: bool


class MarketOracle:
    """Full-information view of a market; only tests and metrics use it."""

    def __init__(self, config: MarketConfig, tol_br: float = 1e-10, check_concavity: bool = True,
                 validation_grid: int = 101):
        if tol_br <= 0:
            raise ValueError("tol_br must be positive")
        self.config = config
        self.tol_br = float(tol_br)
        self.check_concavity = check_concavity
        self.n = config.n
        self.thetas = config.thetas
        self.own = np.diag(self.thetas).copy()
        self.lo = config.price_box.lo
        self.hi = config.price_box.hi
        self.links = _LinkBank([s.link for s in config.sellers])
        self._validation_grid = validation_grid
        self._xi_hat = None

    @property
    def xi_hat(self) -> list[float]:
        if self._xi_hat is None:
            self._xi_hat = validate_market(self.config, self._validation_grid).xi_hat
        return self._xi_hat

    def _check_box(self, p):
        if not self.config.price_box.contains(p, atol=1e-9):
            raise MarketError(f"price vector {p} lies outside the price box")

    def rival_index(self, P):
        """``c_i = <theta_i, p> - theta_ii p_i`` for each row of ``P``."""
        P = np.atleast_2d(P)
        return P @ self.thetas.T - P * self.own

    def revenues(self, p) -> np.ndarray:
        """All sellers' true revenues at the joint price ``p`` (no box check)."""
        p = np.asarray(p, float)
        return p * self.links.mean(self.thetas @ p)

    def true_revenue(self, i: int, p) -> float:
        p = np.asarray(p, float)
        self._check_box(p)
        return float(p[i] * self.config.sellers[i].link.mean(self.thetas[i] @ p))

    def _best_response_flat(self, idx, c):
        """Best responses for sellers ``idx`` facing rival indices ``c``."""
        idx = np.asarray(idx)
        c = np.asarray(c, float)
        th = self.own[idx]
        lo, hi = self.lo[idx], self.hi[idx]
        bank = self.links.take(idx)

        def rev(x):
            return x * bank.mean(th * x + c)

        def foc(x):
            m, d1, d2 = bank.derivs(th * x + c)
            return m + th * x * d1, 2 * th * d1 + th * th * x * d2

        a, b = golden_section_max(rev, lo, hi, tol=1e-5 * float(np.max(hi - lo)))
        x = 0.5 * (a + b)

        # Golden section on values stalls near sqrt(machine eps); finish on the
        # first-order condition, whose slope is bounded away from zero.
        g_lo, _ = foc(lo)
        g_hi, _ = foc(hi)
        at_hi = g_hi >= 0
        at_lo = (g_lo <= 0) & ~at_hi
        interior = ~(at_hi | at_lo)
        left = np.where(interior & (foc(a)[0] > 0), a, lo)
        right = np.where(interior & (foc(b)[0] < 0), b, hi)
        for _ in range(100):
            g, dg = foc(x)
            newton = x - g / np.where(dg < 0, dg, -1.0)
            left = np.where(g > 0, x, left)
            right = np.where(g <= 0, x, right)
            ok = (dg < 0) & (newton >= left) & (newton <= right)
            x_new = np.where(ok, newton, 0.5 * (left + right))
            step = np.abs(x_new - x)
            x = np.where(interior, x_new, x)
            if np.all(~interior | (step <= 1e-15 * (1 + np.abs(x))) | (right - left <= 1e-15)):
                break
        x = np.where(at_hi, hi, np.where(at_lo, lo, x))
        x = np.clip(x, lo, hi)
        # a boundary pick must also beat the golden-section point in value
        xg = np.clip(0.5 * (a + b), lo, hi)
        x = np.where(rev(xg) > rev(x) + 1e-15, xg, x)

        if self.check_concavity:
            _, curv = foc(x)
            if np.any(curv > 1e-9):
                bad = idx[np.argmax(curv)]
                raise ConcavityError(
                    f"seller {bad}: revenue curvature {curv.max():.3g} > 0 at the best response; "
                    "own-price revenue is not strongly concave"
                )
        return x

    def best_response(self, i: int, p_minus_i) -> float:
        p_minus_i = np.asarray(p_minus_i, float)
        if p_minus_i.shape != (self.n - 1,):
            raise ValueError(f"expected {self.n - 1} rival prices")
        p = np.insert(p_minus_i, i, self.lo[i])
        self._check_box(p)
        c = self.thetas[i] @ p - self.own[i] * p[i]
        return float(self._best_response_flat(np.array([i]), np.array([c]))[0])

    def best_response_operator(self, p) -> np.ndarray:
        p = np.asarray(p, float)
        if p.ndim == 1:
            self._check_box(p)
        return self.best_response_batch(p)

    def best_response_batch(self, P) -> np.ndarray:
        """Rows of ``P`` are joint price vectors; returns their images under Gamma."""
        P = np.asarray(P, float)
        flat_shape = P.shape
        P2 = np.atleast_2d(P)
        m = P2.shape[0]
        c = self.rival_index(P2).ravel()
        idx = np.tile(np.arange(self.n), m)
        return self._best_response_flat(idx, c).reshape(flat_shape)

    def contraction_constant(self) -> float:
        L = contraction_constant_of(self.config)
        if L >= 1:
            warnings.warn(f"contraction constant {L:.4g} >= 1: equilibrium uniqueness is not guaranteed",
                          RuntimeWarning, stacklevel=2)
        return L

    def nash_equilibrium(self, tol: float = 1e-10, max_iter: int = 10_000, start=None) -> NashResult:
        """Picard iteration ``p <- Gamma(p)`` from the box midpoint.

        Stops once ``|Gamma(p) - p|_inf <= tol (1 - L)``, which bounds the
        distance to the fixed point by ``tol``.
        """
        if tol <= 0:
            raise ValueError("tol must be positive")
        L = contraction_constant_of(self.config)
        contracting = L < 1
        target = tol * (1 - L) if contracting else tol
        p = self.config.price_box.midpoint if start is None else np.asarray(start, float)
        residual = math.inf
        for it in range(1, max_iter + 1):
            q = self.best_response_batch(p)
            residual = float(np.max(np.abs(q - p)))
            p = q
            if residual <= target:
                bound = residual / (1 - L) if contracting else math.inf
                return NashResult(p, it, residual, bound, contracting)
        logger.warning("Nash iteration did not converge in %d steps (residual %.3g)", max_iter, residual)
        bound = residual / (1 - L) if contracting else math.inf
        return NashResult(p, max_iter, residual, bound, False)

    def instantaneous_regret(self, p) -> np.ndarray:
        p = np.asarray(p, float)
        br = self.best_response_batch(p)
        return self.regret_given_response(p, br)

    def regret_given_response(self, p, br) -> np.ndarray:
        c = self.rival_index(p).ravel()
        best = br * self.links.mean(self.own * br + c)
        return best - self.revenues(p)
