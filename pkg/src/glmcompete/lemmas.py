"""Numerical checks of the inequalities the regret analysis rests on.

Every check returns a ``LemmaReport`` whose pass flag can be recomputed
from its stored ``lhs``, ``rhs`` and ``tolerance``.  Checks that scan many
points report the worst one.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .market import LinkFunction, MarketConfig
from .oracle import MarketOracle
from .simulator import Episode, PolicyConfig, Trajectory, elliptical_bound_value


@dataclass
class LemmaReport:
    lemma: str
    instance: str
    lhs: float
    rhs: float
    tolerance: float
    passed: bool
    margin: float
    details: dict = field(default_factory=dict)

    @classmethod
    def build(cls, lemma, instance, lhs, rhs, tolerance=0.0, details=None, passed=None):
        lhs, rhs, tolerance = float(lhs), float(rhs), float(tolerance)
        margin = rhs + tolerance - lhs
        if passed is None:
            passed = lhs <= rhs + tolerance
        return cls(lemma, instance, lhs, rhs, tolerance, bool(passed), margin, details or {})

    def recheck(self) -> bool:
        return self.lhs <= self.rhs + self.tolerance

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), sort_keys=True, allow_nan=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def write_reports(reports, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


# --- geometric summation ---------------------------------------------------

def discounted_sums(a, q: float) -> np.ndarray:
    """``b_t = sum_{j<t} q^j a_{t-j-1}`` for t = 1..T via ``b_t = q b_{t-1} + a_{t-1}``."""
    a = np.asarray(a, float)
    b = np.empty_like(a)
    acc = 0.0
    for t, v in enumerate(a):
        acc = q * acc + v
        b[t] = acc
    return b


def check_summation_inequality(a, q: float) -> LemmaReport:
    """``sum_t (sum_j q^j a_{t-j-1})^2 <= sum_k a_k^2 / (1 - q)^2``."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    a = np.asarray(a, float)
    lhs = float(np.sum(discounted_sums(a, q) ** 2))
    rhs = float(np.sum(a ** 2)) / (1.0 - q) ** 2
    tol = 1e-12 * (1.0 + rhs)
    return LemmaReport.build("summation", f"T={len(a)}, q={q:g}", lhs, rhs, tol)


# --- elliptical potential ----------------------------------------------------

def design_inverse_diagonals(prices, ridge) -> np.ndarray:
    """``[V_j^{(t)}]^{-1}_{jj}`` for t = 0..T and each seller j, by dense inversion.

    ``V_j^{(t)} = ridge_j I + sum_{s<t} p^{(s)} p^{(s)T}``, so round t sees the
    t price vectors posted before it (round 0 included).
    """
    P = np.asarray(prices, float)
    T1, n = P.shape
    ridge = np.broadcast_to(np.asarray(ridge, float), (n,))
    outer = np.einsum("ti,tj->tij", P, P)
    gram = np.concatenate([np.zeros((1, n, n)), np.cumsum(outer, axis=0)[:-1]])
    out = np.empty((T1, n))
    eye = np.eye(n)
    for j in range(n):
        inv = np.linalg.inv(gram + ridge[j] * eye)
        out[:, j] = inv[:, j, j]
    return out


def check_elliptical_bound(traj: Trajectory, reg: float | None = None) -> LemmaReport:
    """Pointwise ``[V^{-1}]_jj <= 1 / (ridge_j + t p_low^2)`` at every round.

    Also records the played-norm sum K(T) against the big-O expression; that
    ratio is monitored, not asserted.
    """
    ridge = np.asarray(traj.ridge, float)
    reg = float(ridge[0]) if reg is None else float(reg)
    T = traj.horizon
    details = {"rounds": T + 1, "sellers": traj.n, "p_lower": traj.p_lower}
    if T > 0:
        K = traj.k_statistic()
        bound = elliptical_bound_value(traj.n, reg, T)
        details.update(K_T=K, K_bound=bound, K_ratio=K / bound)
    instance = f"seed={traj.seed}, N={traj.n}, T={T}"
    diag = design_inverse_diagonals(traj.prices, ridge)
    t = np.arange(T + 1)[:, None]
    rhs = 1.0 / (ridge[None, :] + t * traj.p_lower ** 2)
    tol = 1e-12 * rhs
    excess = diag - rhs - tol
    violations = int(np.sum(excess > 0))
    details["violations"] = violations
    details["violation_rounds"] = int(np.sum(np.any(excess > 0, axis=1)))
    t_w, j_w = np.unravel_index(int(np.argmax(excess)), excess.shape)
    details.update(worst_round=int(t_w), worst_seller=int(j_w))
    if traj.p_lower <= 0:
        details["degenerate"] = "p_lower = 0: the bound is 1/ridge for every t"
        return LemmaReport.build("elliptical_diagonal", instance, diag[t_w, j_w], rhs[t_w, j_w],
                                 tol[t_w, j_w], details, passed=True)
    return LemmaReport.build("elliptical_diagonal", instance, diag[t_w, j_w], rhs[t_w, j_w],
                             tol[t_w, j_w], details)


# --- subgaussian noise -------------------------------------------------------

def exact_mgf(link: LinkFunction, index_value: float, lam) -> np.ndarray:
    """``E exp(lam * (y - mu))`` in closed form."""
    lam = np.asarray(lam, float)
    if link.is_gaussian:
        return np.exp(0.5 * lam ** 2)
    m = float(link.mean(index_value))
    return np.exp(-lam * m) * (1.0 - m + m * np.exp(lam))


def check_subgaussian_mgf(link: LinkFunction, index_value: float, lambda_grid, n_samples: int,
                          rng: np.random.Generator, confidence: float = 1e-6) -> LemmaReport:
    """Monte Carlo ``E exp(lam eta)`` against ``exp(L_mu lam^2 / 2)`` on a grid.

    The slack is Hoeffding's at level ``confidence`` for Bernoulli noise
    (bounded ``exp(lam eta)``) and five standard errors for Gaussian noise.
    """
    lo, hi = link.interval
    if not lo - 1e-12 <= index_value <= hi + 1e-12:
        raise ValueError(f"index {index_value} outside the link interval [{lo}, {hi}]")
    lam = np.asarray(lambda_grid, float)
    if np.any(np.abs(lam) > 2.0):
        raise ValueError("lambda grid must satisfy |lambda| <= 2")
    m = float(link.mean(index_value))
    if link.is_gaussian:
        eta = rng.standard_normal(n_samples)
    else:
        eta = (rng.random(n_samples) < m).astype(float) - m
    vals = np.exp(np.outer(lam, eta))
    mc = vals.mean(axis=1)
    if link.is_gaussian:
        slack = 5.0 * vals.std(axis=1, ddof=1) / math.sqrt(n_samples)
    else:
        width = np.exp(np.abs(lam) * max(m, 1.0 - m)) - np.exp(-np.abs(lam) * max(m, 1.0 - m))
        slack = width * math.sqrt(math.log(2.0 / confidence) / (2.0 * n_samples))
    bound = np.exp(0.5 * link.L_mu * lam ** 2)
    slack = np.maximum(slack, 1e-12 * bound)
    k = int(np.argmax(mc - bound - slack))
    details = {
        "link": link.kind,
        "index": float(index_value),
        "lambda": lam,
        "mc": mc,
        "exact": exact_mgf(link, index_value, lam),
        "bound": bound,
        "slack": slack,
        "worst_lambda": float(lam[k]),
    }
    return LemmaReport.build("subgaussian_mgf", f"{link.kind} at u={index_value:.6g}, n={n_samples}",
                             mc[k], bound[k], slack[k], details)


# --- concentration -----------------------------------------------------------

def check_concentration_coverage(config: MarketConfig, policy: PolicyConfig, n_runs: int,
                                 horizon: int | None = None, seeds=None,
                                 rho_check: float | None = None) -> LemmaReport:
    """Fraction of runs in which the revenue band held for every seller and round.

    At round t each seller's plug-in revenue on its price grid (rivals at
    their previous prices) must lie within ``rho * p_i * |p|_{V^{-1}}`` of the
    true revenue.  ``rho_check`` replaces the band width in the check only;
    the policy itself is unchanged.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be positive")
    T = config.horizon if horizon is None else int(horizon)
    delta = policy.delta_for(T)
    seeds = list(range(n_runs)) if seeds is None else list(seeds)[:n_runs]
    thetas = config.thetas
    links = [s.link for s in config.sellers]
    held = 0
    first_breach = []
    for seed in seeds:
        ep = Episode(config, policy, seed, horizon=T, record_regret=False)
        ep.start()
        ok = True
        while ep.t < T:
            ctx = ep.prices[ep.t].copy()
            decisions = ep.step()
            if not ok:
                continue
            for i, d in enumerate(decisions):
                X = np.tile(ctx, (len(d.grid), 1))
                X[:, i] = d.grid
                truth = d.grid * links[i].mean(X @ thetas[i])
                rho = d.rho if rho_check is None else rho_check
                if math.isinf(rho):
                    continue
                band = rho * d.grid * d.grid_norms
                if np.any(np.abs(truth - d.est_revenue) > band + 1e-12):
                    ok = False
                    first_breach.append(ep.t)
                    break
        held += ok
    coverage = held / len(seeds)
    slack = 3.0 * math.sqrt(delta * (1.0 - delta) / len(seeds))
    details = {"runs": len(seeds), "held": held, "delta": delta, "horizon": T,
               "first_breach_rounds": first_breach[:20]}
    # pass iff coverage >= 1 - delta - slack, written as lhs <= rhs + tol
    return LemmaReport.build("concentration_coverage", f"N={config.n}, T={T}, runs={len(seeds)}",
                             1.0 - coverage, delta, slack, details)


# --- best-response contraction -------------------------------------------------

def check_contraction(oracle: MarketOracle, n_pairs: int, rng: np.random.Generator) -> LemmaReport:
    """``|Gamma(p) - Gamma(q)|_inf <= L |p - q|_inf + 10 tol_br`` on random pairs."""
    L = oracle.contraction_constant()
    if L >= 1:
        raise ValueError(f"contraction constant {L:.4g} is not below 1")
    lo, hi = oracle.lo, oracle.hi
    P = rng.uniform(lo, hi, size=(n_pairs, oracle.n))
    Q = rng.uniform(lo, hi, size=(n_pairs, oracle.n))
    gp = oracle.best_response_batch(P)
    gq = oracle.best_response_batch(Q)
    lhs = np.max(np.abs(gp - gq), axis=1)
    rhs = L * np.max(np.abs(P - Q), axis=1)
    tol = 10.0 * oracle.tol_br
    k = int(np.argmax(lhs - rhs))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / np.maximum(np.max(np.abs(P - Q), axis=1), 1e-300), 0.0)
    details = {"pairs": n_pairs, "L_gamma": L, "max_ratio": float(ratio.max()),
               "failures": int(np.sum(lhs > rhs + tol))}
    return LemmaReport.build("contraction", f"N={oracle.n}, pairs={n_pairs}", lhs[k], rhs[k], tol, details)


def summation_suite(rng: np.random.Generator, n_instances: int, qs=(0.1, 0.5, 0.9),
                    max_len: int = 200) -> list[LemmaReport]:
    """Random Gaussian sequences of random length; one worst-case report per ``q``."""
    reports = []
    for q in qs:
        worst = None
        failures = 0
        for _ in range(n_instances):
            a = rng.standard_normal(int(rng.integers(1, max_len + 1)))
            r = check_summation_inequality(a, q)
            failures += not r.passed
            if worst is None or r.margin < worst.margin:
                worst = r
        worst.details.update(instances=n_instances, failures=failures, worst_instance=worst.instance)
        worst.instance = f"{n_instances} random sequences, q={q:g}, T<={max_len}"
        worst.passed = failures == 0
        reports.append(worst)
    return reports
