"""AST of the async-program DSL.

Every command carries the 1-based source line it came from. Promise sites
are named after that line (``p12`` for a promise created on line 12), which
is how trace rows and promise-graph nodes line up with the source.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from .values import Value

# -- expressions ------------------------------------------------------------


@dataclass(frozen=True)
class Lit:
    value: Value


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Field:
    expr: "Expr"
    name: str


@dataclass(frozen=True)
class RecordOf:
    fields: tuple  # ((name, Expr), ...)


@dataclass(frozen=True)
class ListOf:
    items: tuple


@dataclass(frozen=True)
class ApplyBuiltin:
    builtin: str
    args: tuple


Expr = Union[Lit, Var, Field, RecordOf, ListOf, ApplyBuiltin]

BUILTINS = {"computeHash": 1}

# -- asynchronous operations -----------------------------------------------


@dataclass(frozen=True)
class Latency:
    lo: int = 1
    hi: int | None = None  # None: unbounded, bounded by the schedule

    def __post_init__(self):
        if self.lo < 0 or (self.hi is not None and self.hi < self.lo):
            raise ValueError(f"bad latency range {self.lo}..{self.hi}")


@dataclass(frozen=True)
class DbConnect:
    service: str
    latency: Latency = Latency()
    deadline: int | None = None


@dataclass(frozen=True)
class DbRead:
    conn: Expr
    key: str
    latency: Latency = Latency()
    deadline: int | None = None


@dataclass(frozen=True)
class DbWrite:
    conn: Expr
    value: Expr
    key: str
    latency: Latency = Latency()
    deadline: int | None = None


@dataclass(frozen=True)
class Sleep:
    ticks: int
    latency: Latency | None = None  # fixed at ``ticks`` unless overridden
    deadline: int | None = None

    @property
    def effective_latency(self) -> Latency:
        return self.latency or Latency(self.ticks, self.ticks)


@dataclass(frozen=True)
class FailWith:
    message: str
    latency: Latency = Latency()
    deadline: int | None = None


AsyncOp = Union[DbConnect, DbRead, DbWrite, Sleep, FailWith]


def op_latency(op: AsyncOp) -> Latency:
    return op.effective_latency if isinstance(op, Sleep) else op.latency


def op_name(op: AsyncOp) -> str:
    """Short description used in unresolved-promise columns and graph labels."""
    return {
        DbConnect: "db.connect",
        DbRead: "con.read",
        DbWrite: "con.write",
        Sleep: "sleep",
        FailWith: "fail",
    }[type(op)]


# -- commands ---------------------------------------------------------------


@dataclass(frozen=True)
class Handler:
    param: str | None
    body: tuple = ()  # commands run before the result
    result: Union[Expr, AsyncOp, None] = None  # None -> undefined

    @property
    def returns_async(self) -> bool:
        return isinstance(self.result, (DbConnect, DbRead, DbWrite, Sleep, FailWith))


@dataclass(frozen=True)
class Assign:
    scope: str  # "global" | "local"
    name: str
    expr: Expr
    line: int = 0


@dataclass(frozen=True)
class StartAsync:
    target: str
    op: AsyncOp
    line: int = 0


@dataclass(frozen=True)
class Chain:
    source: str
    target: str
    handler: Handler
    line: int = 0

    kind = "chain"


@dataclass(frozen=True)
class Then(Chain):
    kind = "then"


@dataclass(frozen=True)
class Catch(Chain):
    kind = "catch"


@dataclass(frozen=True)
class Finally(Chain):
    kind = "finally"


COMBINATORS = ("all", "allSettled", "any", "race")


@dataclass(frozen=True)
class Combine:
    kind: str
    sources: tuple
    target: str
    line: int = 0

    def __post_init__(self):
        if self.kind not in COMBINATORS:
            raise ValueError(f"unknown combinator {self.kind!r}")


@dataclass(frozen=True)
class Respond:
    """``respond(x)``: ``promise`` names a bound promise, otherwise ``expr``."""

    expr: Expr | None = None
    promise: str | None = None
    line: int = 0


@dataclass(frozen=True)
class End:
    line: int = 0


@dataclass(frozen=True)
class Comment:
    label: str
    line: int = 0


Command = Union[Assign, StartAsync, Then, Catch, Finally, Combine, Respond, End, Comment]

CHAIN_KINDS = {"then": Then, "catch": Catch, "finally": Finally}


@dataclass(frozen=True)
class Program:
    globals: tuple = ()
    main: tuple = ()
    param: str = "event"
    globals_line: int = 1
    main_line: int = 2
    name: str = field(default="program", compare=False)
    source: str = field(default="", compare=False)

    def handlers(self) -> dict[int, Chain]:
        """Chain commands keyed by line; handlers are looked up this way at run time."""
        return {c.line: c for c in self.main if isinstance(c, Chain)}

    def commands(self):
        """All commands, including those nested in handler bodies."""
        for c in self.main:
            yield c
            if isinstance(c, Chain):
                yield from c.handler.body

    @property
    def has_respond(self) -> bool:
        return any(isinstance(c, Respond) for c in self.commands())

    @property
    def has_end(self) -> bool:
        return any(isinstance(c, End) for c in self.commands())
