"""Deterministic simulation harness."""

from .network import FaultPlan, LatencyModel, Network, TRACE_FULL, TRACE_SETTLES
from .oracle import OracleLedger, compare_to_oracle, oracle_apply
from .runner import RunConfig, Trace, World, build, collect, run

__all__ = [
    "FaultPlan", "LatencyModel", "Network", "TRACE_FULL", "TRACE_SETTLES",
    "OracleLedger", "compare_to_oracle", "oracle_apply",
    "RunConfig", "Trace", "World", "build", "collect", "run",
]
