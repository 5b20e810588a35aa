"""Multi-seed runs, file export and the regret-scaling study."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import lemmas
from .config import ExperimentConfig
from .market import contraction_constant_of, validate_market
from .oracle import MarketOracle, NashResult
from .simulator import Trajectory, compute_metrics, k_statistic_dense, run_episode

logger = logging.getLogger(__name__)

WORKERS_ENV = "GLMCOMPETE_WORKERS"
FLOAT_FMT = ".17g"


class AssumptionViolation(RuntimeError):
    """The market fails a modelling condition and ``force`` was not given."""


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(int(raw), 1)
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", WORKERS_ENV, raw)
        return 1


def _fmt(x) -> str:
    return format(float(x), FLOAT_FMT)


def _dumps(obj) -> str:
    return json.dumps(lemmas._jsonable(obj), sort_keys=True, indent=2, allow_nan=True) + "\n"


# --- trajectories on disk ------------------------------------------------------

def csv_header(n: int) -> list[str]:
    return (["t", "seller", "price", "demand", "regret_inst", "regret_cum", "bonus"]
            + [f"theta_{k}" for k in range(n)] + ["dist_to_nash_sq"])


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """One row per (round, seller); floats with 17 significant digits."""
    n = traj.n
    cum = traj.cumulative_regret()
    dist = traj.dist_to_nash_sq()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(n))
        for t in range(traj.horizon + 1):
            for i in range(n):
                w.writerow([t, i, _fmt(traj.prices[t, i]), _fmt(traj.demands[t, i]), _fmt(traj.regret[t, i]),
                            _fmt(cum[t, i]), _fmt(traj.bonus[t, i])]
                           + [_fmt(v) for v in traj.thetas[t, i]] + [_fmt(dist[t])])


def read_trajectory_csv(path) -> dict:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = sum(h.startswith("theta_") for h in header)
    if header != csv_header(n):
        raise ValueError(f"{path}: unexpected header {header}")
    data = np.array(body, dtype=float)
    T1 = len(data) // n
    cols = {name: data[:, k].reshape(T1, n) for k, name in enumerate(header)}
    theta_cols = [cols[f"theta_{k}"] for k in range(n)]
    return {
        "prices": cols["price"],
        "demands": cols["demand"],
        "regret_inst": cols["regret_inst"],
        "regret_cum": cols["regret_cum"],
        "bonus": cols["bonus"],
        "thetas": np.stack(theta_cols, axis=-1),
        "dist_to_nash_sq": cols["dist_to_nash_sq"][:, 0],
    }


def ridge_of(cfg: ExperimentConfig) -> list[float]:
    """Per-seller design ridge ``reg / c_mu``."""
    return [cfg.policy.reg / s.link.c_mu for s in cfg.market.sellers]


def metrics_from_csv(path, ridge) -> dict:
    """Recompute the summary metrics of one seed from its trajectory file.

    ``ridge`` is the per-seller design ridge, see ``ridge_of``.
    """
    d = read_trajectory_csv(path)
    inst = d["regret_inst"].copy()
    inst[0] = 0.0
    return {
        "regret": inst.sum(axis=0).tolist(),
        "nash_dist_sum": float(d["dist_to_nash_sq"][1:].sum()),
        "K_T": k_statistic_dense(d["prices"], ridge),
    }


# --- runs -------------------------------------------------------------------

def _episode_job(args):
    cfg, seed, horizon, nash = args
    return run_episode(cfg.market, cfg.policy, seed, horizon=horizon, nash=nash)


def run_trajectories(cfg: ExperimentConfig, jobs, nash: NashResult, workers: int = 1) -> list[Trajectory]:
    """``jobs`` is a list of ``(seed, horizon)``; results come back in job order."""
    tasks = [(cfg, seed, horizon, nash) for seed, horizon in jobs]
    if workers <= 1 or len(tasks) <= 1:
        return [_episode_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(_episode_job, tasks))


def _check_assumptions(cfg: ExperimentConfig, force: bool):
    report = validate_market(cfg.market, cfg.experiment.validation_grid)
    if not report.ok:
        msg = "; ".join(report.messages)
        if not force:
            raise AssumptionViolation(msg)
        logger.warning("continuing despite failed checks (--force): %s", msg)
    return report


def _prepare_out(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _mean_stderr(x):
    x = np.asarray(x, float)
    k = x.shape[0]
    se = x.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros_like(x[0])
    return x.mean(axis=0), se


def run_experiment(cfg: ExperimentConfig, out_dir, force: bool = False, n_seeds: int | None = None,
                   workers: int | None = None) -> dict:
    """Run every configured seed, write trajectories, lemma reports and the summary."""
    report = _check_assumptions(cfg, force)
    seeds = list(cfg.experiment.seeds)
    if n_seeds is not None:
        if n_seeds < 1:
            raise ValueError("--seeds must be positive")
        seeds = seeds[:n_seeds]
    workers = default_workers() if workers is None else workers
    out = _prepare_out(out_dir)
    oracle = MarketOracle(cfg.market, cfg.policy.tol_br, validation_grid=cfg.experiment.validation_grid)
    nash = oracle.nash_equilibrium()
    T = cfg.market.horizon
    trajs = run_trajectories(cfg, [(s, T) for s in seeds], nash, workers)

    reg = cfg.policy.reg
    metrics = [compute_metrics(tr, reg) for tr in trajs]
    reports = [lemmas.check_elliptical_bound(tr, reg) for tr in trajs]
    if report.L_gamma < 1:
        rng = np.random.default_rng(np.random.SeedSequence([*seeds, 1]))
        reports.append(lemmas.check_contraction(oracle, cfg.experiment.contraction_pairs, rng))
    for tr in trajs:
        write_trajectory_csv(tr, out / f"trajectory_seed{tr.seed}.csv")
    lemmas.write_reports(reports, out / "lemmas.jsonl")

    regret_mean, regret_se = _mean_stderr([m.regret for m in metrics])
    dist_mean, dist_se = _mean_stderr([m.nash_dist_sum for m in metrics])
    summary = {
        "config_echo": cfg.echo(),
        "seeds": seeds,
        "horizon": T,
        "validation": report.to_dict(),
        "nash_price": nash.price,
        "nash_residual": nash.residual,
        "L_gamma": report.L_gamma,
        "regret_mean": regret_mean,
        "regret_stderr": regret_se,
        "nash_dist_sum_mean": float(dist_mean),
        "nash_dist_sum_stderr": float(dist_se),
        "K_T_mean": float(np.mean([m.K_T for m in metrics])),
        "K_bound": metrics[0].K_bound if metrics else None,
        "per_seed": {str(tr.seed): m.to_dict() | {"estimator_warnings": tr.warnings}
                     for tr, m in zip(trajs, metrics)},
        "lemma_reports": [json.loads(r.to_json()) for r in reports],
    }
    (out / "summary.json").write_text(_dumps(summary), encoding="utf-8")
    return summary


# --- scaling study ------------------------------------------------------------

def loglog_slope(horizons, values) -> float:
    x = np.log(np.asarray(horizons, float))
    y = np.log(np.asarray(values, float))
    return float(np.polyfit(x, y, 1)[0])


def bootstrap_slope(horizons, samples, n_boot: int, rng: np.random.Generator, level: float = 0.95):
    """Percentile CI for the log-log slope, resampling seeds at each ladder point.

    ``samples[k]`` holds the per-seed values at ``horizons[k]``.
    """
    samples = [np.asarray(s, float) for s in samples]
    slopes = np.empty(n_boot)
    for b in range(n_boot):
        means = [s[rng.integers(0, len(s), len(s))].mean() for s in samples]
        slopes[b] = loglog_slope(horizons, means)
    alpha = (1.0 - level) / 2.0
    return float(np.quantile(slopes, alpha)), float(np.quantile(slopes, 1.0 - alpha))


def regret_scaling_study(cfg: ExperimentConfig, out_dir=None, force: bool = False,
                         workers: int | None = None) -> dict:
    """Mean regret over sellers and seeds at each horizon, log-log slope and bootstrap CI."""
    ladder = list(cfg.experiment.horizon_ladder)
    seeds = list(cfg.experiment.seeds)
    if len(ladder) < 4:
        raise ValueError(f"scaling needs at least 4 horizons, got {len(ladder)}")
    if len(seeds) < 10:
        raise ValueError(f"scaling needs at least 10 seeds, got {len(seeds)}")
    report = _check_assumptions(cfg, force)
    workers = default_workers() if workers is None else workers
    oracle = MarketOracle(cfg.market, cfg.policy.tol_br, validation_grid=cfg.experiment.validation_grid)
    nash = oracle.nash_equilibrium()
    jobs = [(s, T) for T in ladder for s in seeds]
    trajs = run_trajectories(cfg, jobs, nash, workers)
    reg = cfg.policy.reg
    metrics = [compute_metrics(tr, reg) for tr in trajs]
    k = len(seeds)
    regret = np.array([np.mean(m.regret) for m in metrics]).reshape(len(ladder), k)
    dist = np.array([m.nash_dist_sum for m in metrics]).reshape(len(ladder), k)
    K = np.array([m.K_ratio for m in metrics]).reshape(len(ladder), k)
    mean_regret = regret.mean(axis=1)
    slope = loglog_slope(ladder, mean_regret)
    rng = np.random.default_rng(np.random.SeedSequence([*seeds, *ladder]))
    ci = bootstrap_slope(ladder, list(regret), cfg.experiment.n_bootstrap, rng)
    dist_ratio = dist.mean(axis=1) / np.array([math.sqrt(T) * math.log(T) for T in ladder])
    result = {
        "config_echo": cfg.echo(),
        "validation": report.to_dict(),
        "nash_price": nash.price,
        "L_gamma": report.L_gamma,
        "horizons": ladder,
        "seeds": seeds,
        "regret_mean": mean_regret,
        "regret_stderr": regret.std(axis=1, ddof=1) / math.sqrt(k),
        "slope": slope,
        "slope_ci": list(ci),
        "nash_dist_sum_mean": dist.mean(axis=1),
        "nash_dist_ratio": dist_ratio,
        "K_ratio_mean": K.mean(axis=1),
    }
    if out_dir is not None:
        out = _prepare_out(out_dir)
        with open(out / "scaling.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["horizon", "seed", "regret_mean_sellers", "nash_dist_sum", "K_ratio"])
            for a, T in enumerate(ladder):
                for b, s in enumerate(seeds):
                    w.writerow([T, s, _fmt(regret[a, b]), _fmt(dist[a, b]), _fmt(K[a, b])])
        (out / "scaling.json").write_text(_dumps(result), encoding="utf-8")
    return result


# --- lemma suite --------------------------------------------------------------

def run_lemma_suite(cfg: ExperimentConfig, out_dir=None, workers: int | None = None) -> list:
    """Every lemma check on the configured market; writes ``lemmas.jsonl``."""
    ex = cfg.experiment
    seeds = list(ex.seeds)
    workers = default_workers() if workers is None else workers

    def rng(tag):
        return np.random.default_rng(np.random.SeedSequence([*seeds, tag]))

    reports = lemmas.summation_suite(rng(10), ex.summation_instances)
    oracle = MarketOracle(cfg.market, cfg.policy.tol_br, validation_grid=ex.validation_grid)
    nash = oracle.nash_equilibrium()
    trajs = run_trajectories(cfg, [(s, cfg.market.horizon) for s in seeds], nash, workers)
    reports += [lemmas.check_elliptical_bound(tr, cfg.policy.reg) for tr in trajs]
    lam = np.linspace(-2.0, 2.0, 9)
    seen = set()
    mgf_rng = rng(11)
    for s in cfg.market.sellers:
        lo, hi = s.link.interval
        for u in (lo, 0.5 * (lo + hi), hi):
            key = (s.link.kind, s.link.offset, round(u, 12))
            if key in seen:
                continue
            seen.add(key)
            reports.append(lemmas.check_subgaussian_mgf(s.link, u, lam, ex.mgf_samples, mgf_rng))
    if contraction_constant_of(cfg.market) < 1:
        reports.append(lemmas.check_contraction(oracle, ex.contraction_pairs, rng(12)))
    if ex.coverage_runs > 0:
        pol = replace(cfg.policy, delta=ex.coverage_delta)
        reports.append(lemmas.check_concentration_coverage(
            cfg.market, pol, ex.coverage_runs, ex.coverage_horizon,
            seeds=rng(13).integers(0, 2**31 - 1, ex.coverage_runs).tolist()))
    if out_dir is not None:
        out = _prepare_out(out_dir)
        lemmas.write_reports(reports, out / "lemmas.jsonl")
    return reports
