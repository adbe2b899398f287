"""Small-step rules for a serverless function's local state.

A function state holds three things:

* ``memory``, including the reserved locations ``input`` and ``response``;
* ``event``, the id of the event being processed, or ``"f"`` (free) or
  ``"d"`` (done);
* ``pending``, ids of promises whose asynchronous work is still running.

Each :class:`Action` is handled by exactly one rule per :class:`Variant`.
The variants disagree on ``Receive`` (decoupled needs nothing pending) and on
``Respond``, where wait-all needs nothing pending and the post-state differs.
``EndCall`` exists only under the decoupled variant and ``Invalidate`` under
every variant except single execution.

Everything here is a pure function of immutable values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Union

from .values import Value, to_json

FREE = "f"
DONE = "d"


class Variant(enum.Enum):
    SINGLE = "single"
    REUSE = "reuse"
    WAIT_ALL = "wait-all"
    DECOUPLED = "decoupled"

    @classmethod
    def parse(cls, v: "Variant | str") -> "Variant":
        if isinstance(v, Variant):
            return v
        aliases = {
            "singleexecution": cls.SINGLE, "single-execution": cls.SINGLE,
            "functionreuse": cls.REUSE, "function-reuse": cls.REUSE,
            "waitallonrespond": cls.WAIT_ALL, "wait_all": cls.WAIT_ALL, "waitall": cls.WAIT_ALL,
            "decoupledend": cls.DECOUPLED, "decoupled-end": cls.DECOUPLED,
        }
        key = v.strip().lower()
        for member in cls:
            if member.value == key:
                return member
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown semantics variant {v!r}")

    @property
    def coupled(self) -> bool:
        """True when producing the response is what ends event processing."""
        return self is not Variant.DECOUPLED


@dataclass(frozen=True)
class FunctionState:
    memory: tuple = ()  # sorted ((name, Value), ...)
    event: Union[int, str] = FREE  # event id in progress, FREE or DONE
    pending: frozenset = frozenset()  # promises whose I/O is still running

    @property
    def mem(self) -> dict:
        return dict(self.memory)

    def lookup(self, name: str) -> Value | None:
        for k, v in self.memory:
            if k == name:
                return v
        return None

    @property
    def processing(self) -> bool:
        return isinstance(self.event, int)

    def with_writes(self, writes) -> "FunctionState":
        if not writes:
            return self
        m = dict(self.memory)
        m.update(writes)
        return FunctionState(tuple(sorted(m.items())), self.event, self.pending)

    def to_json(self) -> dict:
        return {
            "memory": {k: to_json(v) for k, v in self.memory},
            "event": self.event,
            "pending": sorted(self.pending),
        }


def initial_state() -> FunctionState:
    """``(empty memory, free, no promises)``."""
    return FunctionState()


# -- actions -------------------------------------------------------------------


@dataclass(frozen=True)
class Receive:
    value: Value
    eid: int  # the fresh id produced by newEid()


@dataclass(frozen=True)
class Respond:
    value: Value


@dataclass(frozen=True)
class EndCall:
    pass


@dataclass(frozen=True)
class Invalidate:
    pass


@dataclass(frozen=True)
class LocalStep:
    label: str
    writes: tuple = ()  # ((name, Value), ...) applied to M


@dataclass(frozen=True)
class StartAsync:
    pid: int


@dataclass(frozen=True)
class Resolve:
    pid: int
    outcome: str = "fulfilled"  # | "rejected"
    value: Value | None = field(default=None, compare=False)


Action = Union[Receive, Respond, EndCall, Invalidate, LocalStep, StartAsync, Resolve]

RULE_NAMES = {
    Receive: "Start Event",
    Respond: "End Event",
    EndCall: "End Event (end())",
    Invalidate: "Invalidate Env",
    LocalStep: "Local Transition",
    StartAsync: "Start Asynchronous Task",
    Resolve: "End Asynchronous Task",
}


class PremiseViolation(Exception):
    """A rule was applied in a state where its premise does not hold."""

    def __init__(self, rule: str, missing: str):
        super().__init__(f"{rule}: premise fails ({missing})")
        self.rule = rule
        self.missing = missing


class QueriedWhileProcessing(Exception):
    pass


def rule_name(a: Action, v: Variant) -> str:
    if isinstance(a, Respond) and v is Variant.DECOUPLED:
        return "Respond"
    return RULE_NAMES[type(a)]


def premise_failure(s: FunctionState, a: Action, v: Variant) -> str | None:
    """Return the first missing premise of ``a``'s rule, or None if enabled."""
    v = Variant.parse(v)
    if isinstance(a, Receive):
        if s.event != FREE:
            return "no event in progress"
        if v is Variant.DECOUPLED and s.pending:
            return "no pending I/O"
        return None
    if isinstance(a, Respond):
        if not s.processing:
            return "an event in progress"
        if s.lookup("response") is None:
            return "response bound"
        if s.lookup("response") != a.value:
            return "response matches"
        if v is Variant.WAIT_ALL and s.pending:
            return "no pending I/O"
        return None
    if isinstance(a, EndCall):
        if v is not Variant.DECOUPLED:
            return "end() exists only under the decoupled semantics"
        if not s.processing:
            return "an event in progress"
        if s.pending:
            return "no pending I/O"
        return None
    if isinstance(a, Invalidate):
        if v is Variant.SINGLE:
            return "no Invalidate rule under single-execution"
        if s.event != FREE:
            return "no event in progress"
        return None
    if isinstance(a, LocalStep):
        return None if s.processing else "an event in progress"
    if isinstance(a, StartAsync):
        return None
    if isinstance(a, Resolve):
        return None if a.pid in s.pending else "promise still pending"
    raise TypeError(f"not an action: {a!r}")


def premise_holds(s: FunctionState, a: Action, v: Variant | str) -> bool:
    return premise_failure(s, a, Variant.parse(v)) is None


@dataclass(frozen=True)
class Effect:
    kind: str  # "response" | "ended"
    value: Value | None = None


def step(s: FunctionState, a: Action, v: Variant | str) -> tuple[FunctionState, tuple]:
    """Apply ``a`` to ``s`` under ``v``; returns the post-state and emitted effects.

    Raises :class:`PremiseViolation` if the rule is not enabled.
    """
    v = Variant.parse(v)
    missing = premise_failure(s, a, v)
    if missing is not None:
        raise PremiseViolation(rule_name(a, v), missing)
    if isinstance(a, Receive):
        m = dict(s.memory)
        m["input"] = a.value
        return FunctionState(tuple(sorted(m.items())), a.eid, s.pending), ()
    if isinstance(a, Respond):
        eff = (Effect("response", a.value),)
        if v is Variant.SINGLE:
            return FunctionState(s.memory, DONE, s.pending), eff
        if v is Variant.DECOUPLED:
            return s, eff
        return FunctionState(s.memory, FREE, s.pending), eff
    if isinstance(a, EndCall):
        return FunctionState(s.memory, FREE, frozenset()), (Effect("ended"),)
    if isinstance(a, Invalidate):
        return FunctionState(s.memory, DONE, s.pending), ()
    if isinstance(a, LocalStep):
        return s.with_writes(a.writes), ()
    if isinstance(a, StartAsync):
        return FunctionState(s.memory, s.event, s.pending | {a.pid}), ()
    if isinstance(a, Resolve):
        return FunctionState(s.memory, s.event, s.pending - {a.pid}), ()
    raise TypeError(a)


def residual_execution(s: FunctionState) -> frozenset:
    """Promises still running once the function stopped processing events."""
    if s.processing:
        raise QueriedWhileProcessing(f"function is processing event {s.event}")
    return s.pending


def action_to_json(a: Action) -> dict:
    d: dict = {"action": type(a).__name__}
    if isinstance(a, Receive):
        d.update(value=to_json(a.value), eid=a.eid)
    elif isinstance(a, Respond):
        d.update(value=to_json(a.value))
    elif isinstance(a, LocalStep):
        d.update(label=a.label, writes={k: to_json(x) for k, x in a.writes})
    elif isinstance(a, StartAsync):
        d.update(pid=a.pid)
    elif isinstance(a, Resolve):
        d.update(pid=a.pid, outcome=a.outcome)
        if a.value is not None:
            d["value"] = to_json(a.value)
    return d


def memory_of(pairs: Mapping[str, Value]) -> tuple:
    return tuple(sorted(pairs.items()))
