"""Layered split-transport stack with a deterministic network simulator.

The heavy lifting lives in the C++ extension; this package re-exports the
operations used to drive experiments from Python.
"""

from _splitflow import (  # noqa: F401
    HEADER_BYTES_ENDPOINT,
    HEADER_BYTES_FLOW,
    HEADER_BYTES_FRAME,
    HEADER_BYTES_ISOLATION,
    builtin_scenarios,
    compare,
    run_scenario,
    scenario_json,
)

__all__ = [
    "builtin_scenarios",
    "compare",
    "run_scenario",
    "scenario_json",
    "HEADER_BYTES_ENDPOINT",
    "HEADER_BYTES_FLOW",
    "HEADER_BYTES_ISOLATION",
    "HEADER_BYTES_FRAME",
]
