"""Simulator for asynchronous federated learning with local concept-drift handling."""

from .config import RunConfig, parse_config
from .sim import RoundRecord, run, run_sync_baseline, simulate

__all__ = ["RunConfig", "parse_config", "RoundRecord", "run", "run_sync_baseline", "simulate"]
