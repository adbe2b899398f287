"""Deterministic laboratory for serverless function termination semantics."""

from __future__ import annotations

from importlib import resources

from .analysis import PromiseGraph, Verdict, build_graph, detect, export_dot, has_path
from .engine import (
    Engine, ReplayDivergence, ScheduleError, ScheduleExhausted, Scripted, Seeded, replay, run,
    suspend_resume, symbolic_script,
)
from .explore import ExplorationReport, StateSpaceExceeded, enumerate_naive, explore
from .invoker import InvokerConfig, Pool
from .parser import ParseError, parse_program, pretty
from .semantics import FunctionState, PremiseViolation, Variant, premise_holds, step
from .trace import ExecutionTrace
from .validate import validate

__version__ = "0.1.0"

SHIPPED = ("running_example.tl", "running_example_end.tl")


def data_text(name: str) -> str:
    """Contents of a file shipped in the package's data directory."""
    return resources.files(__name__).joinpath("data", name).read_text()


def load_shipped(name: str):
    """Parse one of the shipped programs (``.tl`` suffix optional)."""
    if not name.endswith(".tl"):
        name += ".tl"
    return parse_program(data_text(name), name[:-3])


__all__ = [
    "Engine", "ExecutionTrace", "ExplorationReport", "FunctionState", "InvokerConfig",
    "ParseError", "Pool", "PremiseViolation", "PromiseGraph", "ReplayDivergence",
    "ScheduleError", "ScheduleExhausted", "Scripted", "Seeded", "SHIPPED",
    "StateSpaceExceeded", "Variant", "Verdict", "build_graph", "data_text", "detect",
    "enumerate_naive", "explore", "export_dot", "has_path", "load_shipped", "parse_program",
    "premise_holds", "pretty", "replay", "run", "step", "suspend_resume", "symbolic_script",
    "validate",
]
