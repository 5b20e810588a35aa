"""Penalized maximum likelihood for one seller's single-index demand.

The pipeline per round: solve the ridge-penalized score equation with a
damped Newton method, then, if the root falls outside the known parameter
ball, replace it by the point of the ball closest to it in the geometry
``|g(theta_hat) - g(theta)|_{V^{-1}}`` where ``g(theta) = sum mu(p.theta) p
+ reg * theta``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .market import LinkFunction

logger = logging.getLogger(__name__)


class DesignState:
    """Regularized Gram matrix ``V = sum p p^T + (reg / c_mu) I`` and its inverse.

    The inverse is maintained with Sherman-Morrison rank-one updates and
    recomputed exactly every ``reinvert_every`` updates to bound drift.
    """

    def __init__(self, n: int, reg: float, c_mu: float, reinvert_every: int | None = 1000):
        if reg <= 0 or c_mu <= 0:
            raise ValueError("reg and c_mu must be positive")
        self.n = n
        self.reg = float(reg)
        self.c_mu = float(c_mu)
        self.ridge = self.reg / self.c_mu
        self.V = self.ridge * np.eye(n)
        self.V_inv = np.eye(n) / self.ridge
        self.t = 0
        self.reinvert_every = reinvert_every
        self.reinversions = 0

    def copy(self) -> "DesignState":
        other = DesignState(self.n, self.reg, self.c_mu, self.reinvert_every)
        other.V = self.V.copy()
        other.V_inv = self.V_inv.copy()
        other.t = self.t
        other.reinversions = self.reinversions
        return other

    def update(self, p) -> "DesignState":
        p = np.asarray(p, float)
        Vp = self.V_inv @ p
        self.V += np.outer(p, p)
        self.V_inv -= np.outer(Vp, Vp) / (1.0 + p @ Vp)
        self.t += 1
        if self.reinvert_every and self.t % self.reinvert_every == 0:
            self.reinvert()
        return self

    def reinvert(self) -> None:
        self.V_inv = np.linalg.inv(self.V)
        self.V_inv = 0.5 * (self.V_inv + self.V_inv.T)
        self.reinversions += 1

    def drift(self) -> float:
        return float(np.max(np.abs(self.V @ self.V_inv - np.eye(self.n))))

    def norms(self, X) -> np.ndarray:
        """``|x|_{V^{-1}}`` for each row of ``X``."""
        X = np.atleast_2d(X)
        return np.sqrt(np.maximum(((X @ self.V_inv) * X).sum(axis=1), 0.0))


def update_design(state: DesignState, p) -> DesignState:
    return state.update(p)


class History:
    """Append-only record of posted price vectors and one seller's own demands."""

    def __init__(self, n: int, capacity: int = 64):
        self.n = n
        self._P = np.empty((max(capacity, 1), n))
        self._y = np.empty(max(capacity, 1))
        self._len = 0

    def __len__(self) -> int:
        return self._len

    def append(self, p, y: float) -> None:
        if self._len == len(self._y):
            self._P = np.concatenate([self._P, np.empty_like(self._P)])
            self._y = np.concatenate([self._y, np.empty_like(self._y)])
        self._P[self._len] = p
        self._y[self._len] = y
        self._len += 1

    @property
    def prices(self) -> np.ndarray:
        return self._P[: self._len]

    @property
    def demands(self) -> np.ndarray:
        return self._y[: self._len]

    @classmethod
    def from_arrays(cls, P, y) -> "History":
        P = np.atleast_2d(np.asarray(P, float))
        h = cls(P.shape[1], capacity=len(P))
        for p, v in zip(P, np.asarray(y, float)):
            h.append(p, v)
        return h


def score(theta, history: History, link: LinkFunction, reg: float) -> np.ndarray:
    """Gradient of the penalized log-likelihood."""
    theta = np.asarray(theta, float)
    P, y = history.prices, history.demands
    return P.T @ (y - link.mean(P @ theta)) - reg * theta


def information(theta, history: History, link: LinkFunction, reg: float) -> np.ndarray:
    """``J(theta) = sum mu'(p.theta) p p^T + reg I``; the score's Jacobian is ``-J``."""
    P = history.prices
    w = link.deriv(P @ np.asarray(theta, float))
    return (P.T * w) @ P + reg * np.eye(history.n)


def surrogate(theta, history: History, link: LinkFunction, reg: float) -> np.ndarray:
    P = history.prices
    theta = np.asarray(theta, float)
    return P.T @ link.mean(P @ theta) + reg * theta


def penalized_loglik(theta, history: History, link: LinkFunction, reg: float) -> float:
    """Penalized log-likelihood up to the theta-free ``c(y)`` term."""
    P, y = history.prices, history.demands
    u = P @ np.asarray(theta, float)
    return float(y @ u - np.sum(link.log_partition(u)) - 0.5 * reg * np.dot(theta, theta))


@dataclass
class PMLEResult:
    theta: np.ndarray
    iterations: int
    score_norm: float
    tolerance: float
    converged: bool


def solve_pmle(history: History, link: LinkFunction, reg: float, theta_init=None,
               rtol: float = 1e-10, max_iter: int = 100) -> PMLEResult:
    """Damped Newton on the penalized score equation.

    Stops when ``|score| <= rtol (1 + |sum y p|)``; step halving guards the
    flat tails of the logistic link.
    """
    if reg <= 0:
        raise ValueError("reg must be positive")
    n = history.n
    theta = np.zeros(n) if theta_init is None else np.array(theta_init, float)
    tol = rtol * (1.0 + float(np.linalg.norm(history.prices.T @ history.demands)))
    s = score(theta, history, link, reg)
    s_norm = float(np.linalg.norm(s))
    it = 0
    while s_norm > tol and it < max_iter:
        it += 1
        step = np.linalg.solve(information(theta, history, link, reg), s)
        alpha = 1.0
        while True:
            cand = theta + alpha * step
            s_c = score(cand, history, link, reg)
            c_norm = float(np.linalg.norm(s_c))
            if c_norm < s_norm or alpha < 1e-10:
                break
            alpha *= 0.5
        if c_norm >= s_norm:
            break
        theta, s, s_norm = cand, s_c, c_norm
    converged = s_norm <= tol
    if not converged:
        logger.warning("PMLE Newton stopped after %d iterations with |score| = %.3g", it, s_norm)
    return PMLEResult(theta, it, s_norm, tol, converged)


def _ball_quadratic_min(H, c, radius: float) -> np.ndarray:
    """argmin of ``(x - c)^T H (x - c)`` over ``|x|_2 <= radius``, H PSD.

    Outside the ball the minimizer is ``(H + nu I)^{-1} H c`` for the
    multiplier ``nu > 0`` putting it on the sphere.
    """
    if np.linalg.norm(c) <= radius:
        return c.copy()
    w, Q = np.linalg.eigh(0.5 * (H + H.T))
    w = np.clip(w, 0.0, None)
    z = Q.T @ c

    def excess(nu):
        return np.linalg.norm(w / (w + nu) * z) - radius

    if excess(1e-300) <= 0:
        # H is singular along the excess directions: any sphere point of the
        # range-space solution is optimal; take the feasible limit.
        x = Q @ (np.where(w > 0, 1.0, 0.0) * z)
        nrm = np.linalg.norm(x)
        return x * (radius / nrm) if nrm > radius else x
    hi = max(float(w.max()), 1.0)
    while excess(hi) > 0:
        hi *= 2.0
    nu = brentq(excess, 0.0 if w.min() > 0 else 1e-300, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
    x = Q @ (w / (w + nu) * z)
    nrm = np.linalg.norm(x)
    return x * (radius / nrm) if nrm > radius else x


@dataclass
class ProjectionResult:
    theta: np.ndarray
    active: bool
    objective: float
    iterations: int
    converged: bool


def projection_objective(theta, target, history, link, reg, design: DesignState) -> float:
    r = target - surrogate(theta, history, link, reg)
    return float(r @ design.V_inv @ r)


def project_estimate(theta_hat, history: History, link: LinkFunction, reg: float,
                     design: DesignState, radius: float, tol: float = 1e-8,
                     max_iter: int = 500) -> ProjectionResult:
    """Map the raw PMLE into the parameter ball.

    Minimizes ``F(theta) = |g(theta_hat) - g(theta)|^2_{V^{-1}}`` over the
    ball by Gauss-Newton: each step minimizes the linearized objective over
    the ball exactly, followed by backtracking on ``F``.  For the identity
    link ``F`` is quadratic and one step is exact.  Returns the best iterate.
    """
    theta_hat = np.asarray(theta_hat, float)
    nrm = float(np.linalg.norm(theta_hat))
    if nrm <= radius:
        return ProjectionResult(theta_hat.copy(), False, 0.0, 0, True)
    target = surrogate(theta_hat, history, link, reg)
    W = design.V_inv

    def F(th):
        r = target - surrogate(th, history, link, reg)
        return float(r @ W @ r), r

    theta = theta_hat * (radius / nrm)
    f, r = F(theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = information(theta, history, link, reg)
        grad = -2.0 * J @ (W @ r)
        pg = theta - _project_ball(theta - grad, radius)
        if np.linalg.norm(pg) <= tol * (1.0 + np.linalg.norm(target)):
            converged = True
            break
        H = J @ W @ J
        centre = theta + np.linalg.solve(J, r)
        trial = _ball_quadratic_min(H, centre, radius)
        d = trial - theta
        alpha = 1.0
        while alpha > 1e-12:
            cand = theta + alpha * d
            f_c, r_c = F(cand)
            if f_c <= f:
                break
            alpha *= 0.5
        else:
            converged = True  # no descent left along the model step
            break
        moved = float(np.linalg.norm(cand - theta))
        theta, f, r = cand, f_c, r_c
        if moved <= 1e-14 * (1.0 + radius):
            converged = True
            break
    if not converged:
        logger.warning("projection stopped after %d iterations (F = %.3g)", it, f)
    return ProjectionResult(theta, True, f, it, converged)


def _project_ball(x, radius):
    nrm = np.linalg.norm(x)
    return x if nrm <= radius else x * (radius / nrm)


@dataclass
class EstimateBundle:
    theta_hat: np.ndarray
    theta: np.ndarray
    newton_iters: int
    score_norm: float
    projection_active: bool
    converged: bool
