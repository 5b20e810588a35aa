"""Experiment configuration files.

A config is a YAML document with four top-level sections::

    market:      {horizon, noise, noise_cov}
    sellers:     list of {link, offset, beta, gamma, price_bounds, beta_bounds, gamma_bounds}
    policy:      {reg, delta_exponent, delta, grid_size, tol_br, initial_prices, reinvert_every}
    experiment:  {seeds, horizon_ladder, n_bootstrap, validation_grid, contraction_pairs,
                  mgf_samples, summation_instances, coverage_runs, coverage_horizon, coverage_delta}

Unknown keys are errors; the message carries the line number.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .market import MarketConfig, MarketError, PriceBox, make_seller
from .simulator import PolicyConfig


class ConfigError(ValueError):
    """Malformed or inconsistent configuration file."""


_NUM = (int, float)
_SCHEMA = {
    "market": {"horizon": int, "noise": str, "noise_cov": list},
    "seller": {
        "link": str, "offset": _NUM, "beta": _NUM, "gamma": list, "price_bounds": list,
        "beta_bounds": list, "gamma_bounds": list,
    },
    "policy": {
        "reg": _NUM, "delta_exponent": _NUM, "delta": _NUM, "grid_size": int, "tol_br": _NUM,
        "initial_prices": str, "reinvert_every": int,
    },
    "experiment": {
        "seeds": list, "horizon_ladder": list, "n_bootstrap": int, "validation_grid": int,
        "contraction_pairs": int, "mgf_samples": int, "summation_instances": int,
        "coverage_runs": int, "coverage_horizon": int, "coverage_delta": _NUM,
    },
}
_REQUIRED_SELLER = ("beta", "gamma", "price_bounds")


@dataclass(frozen=True)
class ExperimentSettings:
    seeds: tuple[int, ...] = (0,)
    horizon_ladder: tuple[int, ...] = ()
    n_bootstrap: int = 2000
    validation_grid: int = 101
    contraction_pairs: int = 1000
    mgf_samples: int = 100_000
    summation_instances: int = 1000
    coverage_runs: int = 100
    coverage_horizon: int = 200
    coverage_delta: float = 0.05

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("experiment.seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("experiment.seeds must be distinct")
        ladder = self.horizon_ladder
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError("experiment.horizon_ladder must be strictly increasing")
        if any(t < 1 for t in ladder):
            raise ConfigError("experiment.horizon_ladder entries must be positive")
        if not 0 < self.coverage_delta < 1:
            raise ConfigError("experiment.coverage_delta must lie in (0, 1)")


@dataclass
class ExperimentConfig:
    market: MarketConfig
    policy: PolicyConfig
    experiment: ExperimentSettings
    raw: dict = field(repr=False, default_factory=dict)
    source: str | None = None

    def echo(self) -> dict:
        """Every knob with defaults filled in; enough to rebuild the run."""
        sellers = []
        for s in self.market.sellers:
            entry = {
                "link": s.link.kind,
                "beta": s.beta,
                "gamma": [float(g) for g in s.gamma],
                "price_bounds": list(s.price_interval),
                "beta_bounds": list(s.param_space.beta_bounds),
                "gamma_bounds": [list(g) for g in s.param_space.gamma_bounds],
            }
            if s.link.kind == "identity":
                entry["offset"] = s.link.offset
            sellers.append(entry)
        ex = asdict(self.experiment)
        return {
            "market": {
                "horizon": self.market.horizon,
                "noise": self.market.noise,
                "noise_cov": None if self.market.noise_cov is None else [list(r) for r in self.market.noise_cov],
            },
            "sellers": sellers,
            "policy": asdict(self.policy),
            "experiment": {k: list(v) if isinstance(v, tuple) else v for k, v in ex.items()},
        }


def _line_index(node, path=(), out=None) -> dict:
    """Map key paths to 1-based source lines."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_index(v, path + (key,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out[path + (i,)] = v.start_mark.line + 1
            _line_index(v, path + (i,), out)
    return out


class _Checker:
    def __init__(self, lines: dict, source: str):
        self.lines = lines
        self.source = source

    def fail(self, path, msg):
        line = self.lines.get(tuple(path))
        where = f"{self.source}:{line}" if line else self.source
        dotted = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(f"{where}: {dotted}: {msg}")

    def section(self, data, path, schema):
        if data is None:
            return {}
        if not isinstance(data, dict):
            self.fail(path, "expected a mapping")
        for key, val in data.items():
            if key not in schema:
                self.fail(path + (key,), f"unknown key (allowed: {', '.join(sorted(schema))})")
            want = schema[key]
            if val is None:
                continue
            if want is int and (isinstance(val, bool) or not isinstance(val, int)):
                self.fail(path + (key,), f"expected an integer, got {val!r}")
            if want is _NUM and (isinstance(val, bool) or not isinstance(val, _NUM)):
                self.fail(path + (key,), f"expected a number, got {val!r}")
            if want in (str, list) and not isinstance(val, want):
                self.fail(path + (key,), f"expected a {want.__name__}, got {val!r}")
        return data

    def pair(self, val, path):
        try:
            lo, hi = (float(v) for v in val)
        except (TypeError, ValueError):
            self.fail(path, f"expected [low, high], got {val!r}")
        return lo, hi


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: not valid YAML: {exc}") from exc
    if node is None or not isinstance(data, dict):
        raise ConfigError(f"{source}: expected a mapping with market/sellers/policy/experiment sections")
    chk = _Checker(_line_index(node), source)
    chk.section(data, (), {"market": dict, "sellers": list, "policy": dict, "experiment": dict})
    market = chk.section(data.get("market"), ("market",), _SCHEMA["market"])
    policy = chk.section(data.get("policy"), ("policy",), _SCHEMA["policy"])
    experiment = chk.section(data.get("experiment"), ("experiment",), _SCHEMA["experiment"])
    sellers_raw = data.get("sellers")
    if not isinstance(sellers_raw, list) or not sellers_raw:
        chk.fail(("sellers",), "expected a nonempty list of sellers")
    for k, s in enumerate(sellers_raw):
        chk.section(s, ("sellers", k), _SCHEMA["seller"])
        if not isinstance(s, dict):
            chk.fail(("sellers", k), "expected a mapping")
        for req in _REQUIRED_SELLER:
            if s.get(req) is None:
                chk.fail(("sellers", k), f"missing required key {req!r}")

    if "horizon" not in market:
        chk.fail(("market",), "missing required key 'horizon'")
    n = len(sellers_raw)
    bounds = [chk.pair(s["price_bounds"], ("sellers", k, "price_bounds")) for k, s in enumerate(sellers_raw)]
    try:
        box = PriceBox(tuple(b[0] for b in bounds), tuple(b[1] for b in bounds))
    except MarketError as exc:
        chk.fail(("sellers",), str(exc))
    sellers = []
    for k, s in enumerate(sellers_raw):
        path = ("sellers", k)
        gamma = s["gamma"]
        if len(gamma) != n - 1:
            chk.fail(path + ("gamma",), f"expected {n - 1} cross sensitivities, got {len(gamma)}")
        link = s.get("link", "identity")
        params = None
        if s.get("offset") is not None:
            params = {"offset": float(s["offset"])}
        beta_bounds = chk.pair(s["beta_bounds"], path + ("beta_bounds",)) if s.get("beta_bounds") else None
        gamma_bounds = None
        if s.get("gamma_bounds") is not None:
            gb = s["gamma_bounds"]
            if len(gb) != n - 1:
                chk.fail(path + ("gamma_bounds",), f"expected {n - 1} intervals, got {len(gb)}")
            gamma_bounds = [chk.pair(g, path + ("gamma_bounds", j)) for j, g in enumerate(gb)]
        try:
            sellers.append(make_seller(k, float(s["beta"]), [float(g) for g in gamma], box, link, params,
                                       beta_bounds, gamma_bounds))
        except (MarketError, ValueError) as exc:
            chk.fail(path, str(exc))
    try:
        cov = market.get("noise_cov")
        mc = MarketConfig(tuple(sellers), market["horizon"], market.get("noise", "independent"),
                          None if cov is None else tuple(tuple(float(v) for v in r) for r in cov))
    except (MarketError, TypeError, ValueError) as exc:
        chk.fail(("market",), str(exc))

    pol_kwargs = {k: v for k, v in policy.items() if v is not None or k in ("delta", "reinvert_every")}
    for key in ("reg", "delta_exponent", "tol_br"):
        if key in pol_kwargs:
            pol_kwargs[key] = float(pol_kwargs[key])
    if pol_kwargs.get("delta") is not None:
        pol_kwargs["delta"] = float(pol_kwargs["delta"])
    pc = PolicyConfig(**pol_kwargs)
    if pc.reg <= 0:
        chk.fail(("policy", "reg"), "must be positive")
    if pc.grid_size < 2:
        chk.fail(("policy", "grid_size"), "must be at least 2")
    if pc.delta is not None and not 0 < pc.delta < 1:
        chk.fail(("policy", "delta"), "must lie in (0, 1)")
    if pc.delta_exponent <= 1:
        chk.fail(("policy", "delta_exponent"), "must exceed 1")
    if pc.initial_prices not in ("midpoint", "uniform"):
        chk.fail(("policy", "initial_prices"), "must be 'midpoint' or 'uniform'")

    ex_kwargs = {k: v for k, v in experiment.items() if v is not None}
    for key in ("seeds", "horizon_ladder"):
        if key in ex_kwargs:
            vals = ex_kwargs[key]
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in vals):
                chk.fail(("experiment", key), "expected a list of integers")
            ex_kwargs[key] = tuple(vals)
    if "coverage_delta" in ex_kwargs:
        ex_kwargs["coverage_delta"] = float(ex_kwargs["coverage_delta"])
    try:
        ex = ExperimentSettings(**ex_kwargs)
    except ConfigError as exc:
        chk.fail(("experiment",), str(exc))
    return ExperimentConfig(mc, pc, ex, data, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.echo(), sort_keys=False)
