"""Promise records, settlement and the four combinators.

Records are immutable; every operation returns an updated copy together with
the ids of reactions that became runnable. Reactions run FIFO in the order
they were attached.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from .values import ErrorVal, List, Record, Str, Value

PENDING = "pending"
FULFILLED = "fulfilled"
REJECTED = "rejected"

IO = "io"
REACTION = "reaction"
COMBINATOR = "combinator"


class DoubleSettle(Exception):
    """A promise was settled a second time with a different outcome."""


@dataclass(frozen=True)
class PromiseRecord:
    id: int
    origin: int  # event during whose processing the promise was created
    site: str  # "p<line>"
    line: int
    kind: str  # IO | REACTION | COMBINATOR
    desc: str  # "db.connect", "then()", "allSettled", "produce response", ...
    chain: str | None = None  # then/catch/finally, or the combinator kind
    parents: tuple = ()
    reactions: tuple = ()  # reaction ids attached to this promise, FIFO
    dependents: tuple = ()  # combinators listing this promise as a member
    adopted: int | None = None  # reaction: the promise its handler returned
    adopter: int | None = None  # promise returned by a handler: the reaction adopting it
    started: bool = False  # counted in the function's pending set
    state: str = PENDING
    value: Value | None = None
    instance: int = 1
    handler_op: str | None = None  # reaction whose handler returns an async op

    @property
    def pending(self) -> bool:
        return self.state == PENDING

    def key(self) -> tuple:
        return (
            self.id, self.origin, self.site, self.kind, self.desc, self.chain, self.parents,
            self.reactions, self.dependents, self.adopted, self.adopter, self.started,
            self.state, None if self.value is None else self.value.ckey, self.instance,
        )

    def to_json(self) -> dict:
        from .values import to_json

        return {
            "id": self.id, "origin": self.origin, "site": self.site, "line": self.line,
            "kind": self.kind, "desc": self.desc, "chain": self.chain,
            "parents": list(self.parents), "reactions": list(self.reactions),
            "dependents": list(self.dependents), "adopted": self.adopted,
            "adopter": self.adopter, "started": self.started, "state": self.state,
            "value": None if self.value is None else to_json(self.value),
            "instance": self.instance, "handler_op": self.handler_op,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PromiseRecord":
        from .values import from_json

        d = dict(d)
        for k in ("parents", "reactions", "dependents"):
            d[k] = tuple(d[k])
        d["value"] = None if d["value"] is None else from_json(d["value"])
        return cls(**d)


def settle(p: PromiseRecord, outcome: str, value: Value) -> tuple[PromiseRecord, tuple]:
    """Settle ``p``; returns the new record and the reactions now runnable.

    Settling again with the same outcome is a no-op (nothing becomes runnable).
    """
    if outcome not in (FULFILLED, REJECTED):
        raise ValueError(f"bad outcome {outcome!r}")
    if not p.pending:
        if p.state != outcome:
            raise DoubleSettle(f"{p.site} (#{p.id}) already {p.state}, cannot become {outcome}")
        return p, ()
    return replace(p, state=outcome, value=value), p.reactions


def attach(p: PromiseRecord, reaction: int) -> tuple[PromiseRecord, tuple]:
    """Register a reaction; it is runnable at once if ``p`` already settled."""
    p = replace(p, reactions=p.reactions + (reaction,))
    return p, (() if p.pending else (reaction,))


def reaction_fires(chain: str, outcome: str) -> bool:
    """Does a ``then``/``catch``/``finally`` handler run for this parent outcome?"""
    return chain == "finally" or (chain == "then") == (outcome == FULFILLED)


def _settlement(outcome: str, value: Value) -> Record:
    if outcome == FULFILLED:
        return Record((("status", Str("fulfilled")), ("value", value)))
    return Record((("status", Str("rejected")), ("reason", value)))


def decide(kind: str, members: Sequence[tuple[str, Value | None]],
           trigger: int | None = None) -> tuple[str, Value] | None:
    """Settlement of a combinator, or None while it stays pending.

    ``members`` are ``(state, value)`` pairs in argument order. ``trigger`` is
    the index of the member whose settlement prompted this decision; with
    ``None`` (combinator creation) settled members are considered in order.
    """
    if trigger is None:
        if not members:
            return {
                "all": (FULFILLED, List(())),
                "allSettled": (FULFILLED, List(())),
                "any": (REJECTED, ErrorVal("all promises were rejected")),
                "race": None,
            }[kind]
        for i, (st, _) in enumerate(members):
            if st != PENDING:
                got = decide(kind, members, i)
                if got is not None:
                    return got
        return None
    st, val = members[trigger]
    states = [s for s, _ in members]
    if kind == "all":
        if st == REJECTED:
            return REJECTED, val
        if all(s == FULFILLED for s in states):
            return FULFILLED, List(tuple(v for _, v in members))
        return None
    if kind == "allSettled":
        if PENDING in states:
            return None
        return FULFILLED, List(tuple(_settlement(s, v) for s, v in members))
    if kind == "any":
        if st == FULFILLED:
            return FULFILLED, val
        if all(s == REJECTED for s in states):
            return REJECTED, ErrorVal("all promises were rejected")
        return None
    if kind == "race":
        return (st, val) if st != PENDING else None
    raise ValueError(f"unknown combinator {kind!r}")
