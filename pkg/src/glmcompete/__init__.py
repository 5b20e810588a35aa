"""Simulator for repeated price competition under single-index demand."""
from .market import (
    LinkFunction,
    MarketConfig,
    MarketError,
    ParamSpace,
    PriceBox,
    SellerSpec,
    make_link,
    make_seller,
    validate_market,
)
from .oracle import ConcavityError, MarketOracle, NashResult
from .simulator import Episode, PolicyConfig, Trajectory, compute_metrics, run_episode

__version__ = "0.1.0"

__all__ = [
    "ConcavityError",
    "Episode",
    "LinkFunction",
    "MarketConfig",
    "MarketError",
    "MarketOracle",
    "NashResult",
    "ParamSpace",
    "PolicyConfig",
    "PriceBox",
    "SellerSpec",
    "Trajectory",
    "compute_metrics",
    "make_link",
    "make_seller",
    "run_episode",
    "validate_market",
]
