"""Volatility-persistence laboratory.

A library for rolling long-memory and roughness estimation on realized
variance panels, persistence-augmented volatility forecasting with strict
walk-forward evaluation, panel-aware forecast inference, and
volatility-managed portfolio backtests. Ships synthetic generators with
known ground truth so every estimator can be validated end to end.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, EstimationError, VolpersError

__all__ = [
    "ConfigError",
    "DataError",
    "EstimationError",
    "VolpersError",
    "__version__",
]
