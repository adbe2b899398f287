"""Exhaustive schedule exploration.

:func:`explore` is a depth-first search over engine states, memoized on the
canonical state key (clock excluded, so timing-equivalent states merge). Each
distinct terminal outcome is reported with the number of maximal schedules
reaching it and one witness script that replays to it.

:func:`enumerate_naive` walks every schedule without memoization; it exists to
cross-check :func:`explore`.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import syntax as S
from .engine import Engine, World, run, Scripted
from .semantics import Variant
from .values import from_json as value_from_json


class StateSpaceExceeded(Exception):
    def __init__(self, max_states: int, partial: "ExplorationReport"):
        super().__init__(f"more than {max_states} distinct states")
        self.max_states = max_states
        self.partial = partial


@dataclass
class OutcomeClass:
    key: tuple
    paths: int
    witness: list  # choice-index script
    verdict: object = None  # analysis.Verdict of the witness run
    summary: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "paths": self.paths, "witness": list(self.witness), "summary": self.summary,
            "verdict": None if self.verdict is None else self.verdict.to_json(),
        }


@dataclass
class ExplorationReport:
    program: str
    variant: str
    events: list
    outcomes: list
    states: int
    complete: bool = True

    @property
    def total_paths(self) -> int:
        return sum(o.paths for o in self.outcomes)

    def outcome_keys(self) -> set:
        return {o.key for o in self.outcomes}

    def to_json(self) -> dict:
        return {
            "program": self.program, "variant": self.variant, "events": self.events,
            "states": self.states, "complete": self.complete, "paths": self.total_paths,
            "outcomes": [o.to_json() for o in self.outcomes],
        }


def explore(program: S.Program, events: Sequence, variant: Variant | str, *,
            max_states: int = 100_000, analyze: bool = True,
            monitor: Callable | None = None) -> ExplorationReport:
    """Enumerate every terminal outcome reachable from ``events``.

    ``monitor(before, action, after, world)`` is called for every rule the
    engine applies in each distinct transition explored. Raises
    :class:`StateSpaceExceeded` (carrying a partial report) past ``max_states``.
    """
    variant = Variant.parse(variant)
    engine = Engine(program, variant)
    engine.on_action = monitor
    root = engine.initial(events, record=False)
    engine.settle_down(root)
    memo: dict = {}
    found: dict = {}  # outcome -> witness, filled as terminals are discovered
    path: list[int] = []

    def dfs(w: World) -> dict:
        k = w.key()
        hit = memo.get(k)
        if hit is not None:
            return hit
        options = engine.choices(w)
        if not options:
            o = engine.outcome(w)
            found.setdefault(o, list(path))
            res = {o: (1, ())}
        else:
            res = {}
            branching = len(options) > 1
            for i, c in enumerate(options):
                nxt = w.clone()
                engine.apply(nxt, c)
                if branching:
                    path.append(i)
                sub = dfs(nxt)
                if branching:
                    path.pop()
                for o, (n, suffix) in sub.items():
                    if o in res:
                        res[o] = (res[o][0] + n, res[o][1])
                    else:
                        res[o] = (n, ((i,) + suffix) if branching else suffix)
        memo[k] = res
        if len(memo) > max_states:
            raise _Abort()
        return res

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 10_000))
    try:
        result = dfs(root)
        complete = True
    except _Abort:
        result = {o: (0, tuple(wit)) for o, wit in found.items()}
        complete = False
    finally:
        sys.setrecursionlimit(limit)
    outcomes = [OutcomeClass(o, n, list(wit)) for o, (n, wit) in result.items()]
    outcomes.sort(key=lambda oc: oc.witness)
    if analyze:
        for oc in outcomes:
            _annotate(oc, program, events, variant)
    report = ExplorationReport(program.name, variant.value, _json_events(events), outcomes,
                               len(memo), complete)
    if not complete:
        raise StateSpaceExceeded(max_states, report)
    return report


class _Abort(Exception):
    pass


def _json_events(events) -> list:
    from .values import from_python, to_json

    return [to_json(from_python(e)) for e in events]


def _annotate(oc: OutcomeClass, program, events, variant) -> None:
    from .analysis import detect

    trace = run(program, events, variant, Scripted(oc.witness))
    oc.verdict = detect(trace, variant)
    oc.summary = summarize(trace)


def summarize(trace) -> dict:
    """Human-readable digest of a finished run."""
    from .values import display

    sites = {p["id"]: p["site"] for p in trace.promises}
    last = trace.steps[-1] if trace.steps else None
    residual = sorted(sites[p] for p in (last.pending if last else ()))
    return {
        "status": trace.status,
        "db": {k: display(value_from_json(v)) for k, v in trace.db.items()},
        "responses": {str(r["event"]): display(value_from_json(r["value"])) for r in trace.responses},
        "broken": sorted(sites[p] for _, p in trace.broken),
        "residual": residual,
        "effects": [" ".join(str(x) for x in e) for e in trace.effects],
    }


def enumerate_naive(program: S.Program, events: Sequence, variant: Variant | str) -> dict:
    """Outcome -> number of maximal schedules, by brute-force recursion."""
    engine = Engine(program, Variant.parse(variant))
    root = engine.initial(events, record=False)
    engine.settle_down(root)
    counts: dict = {}

    def walk(w: World) -> None:
        options = engine.choices(w)
        if not options:
            o = engine.outcome(w)
            counts[o] = counts.get(o, 0) + 1
            return
        for c in options:
            nxt = w.clone()
            engine.apply(nxt, c)
            walk(nxt)

    walk(root)
    return counts
