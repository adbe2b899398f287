"""Static checks on parsed (or hand-built) programs."""

from __future__ import annotations

from dataclasses import dataclass

from . import syntax as S
from .semantics import Variant

RESERVED = ("input", "response")


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    line: int
    code: str
    message: str

    def __str__(self):
        return f"{self.severity}: line {self.line}: {self.message} [{self.code}]"


def validate(p: S.Program, variant: Variant | str | None = None) -> list[Diagnostic]:
    """Return diagnostics for ``p``; an empty list means the program is clean.

    ``variant`` is the semantics the program is meant to run under. ``end()``
    only has meaning under the decoupled variant and draws a warning elsewhere.
    """
    if variant is not None:
        variant = Variant.parse(variant)
    out: list[Diagnostic] = []
    bound: set[str] = set()

    def need(name: str, line: int, scope: set[str]):
        if name not in scope:
            out.append(Diagnostic("error", line, "unbound-promise",
                                  f"promise {name!r} used before it is bound"))

    def check_exprs(c, line):
        for e in _exprs_of(c):
            for call in _calls(e):
                if S.BUILTINS.get(call.builtin) != len(call.args):
                    out.append(Diagnostic("error", line, "bad-call",
                                          f"{call.builtin} expects {S.BUILTINS.get(call.builtin)} argument(s)"))

    def check(c, scope: set[str]):
        line = c.line
        check_exprs(c, line)
        if isinstance(c, S.Assign) and c.name in RESERVED:
            out.append(Diagnostic("error", line, "reserved", f"{c.name!r} is a reserved location"))
        elif isinstance(c, S.StartAsync):
            scope.add(c.target)
        elif isinstance(c, S.Chain):
            need(c.source, line, scope)
            inner = set(scope)
            for b in c.handler.body:
                check(b, inner)
            scope.add(c.target)
        elif isinstance(c, S.Combine):
            for s in c.sources:
                need(s, line, scope)
            scope.add(c.target)
        elif isinstance(c, S.Respond) and c.promise is not None:
            need(c.promise, line, scope)
        elif isinstance(c, S.End) and variant is not None and variant is not Variant.DECOUPLED:
            out.append(Diagnostic("warning", line, "end-unsupported",
                                  f"end() has no effect under the {variant.value} semantics"))

    for c in p.main:
        check(c, bound)

    main_responds = [c for c in p.main if isinstance(c, S.Respond)]
    handler_responds = {c.line: [b for b in c.handler.body if isinstance(b, S.Respond)]
                        for c in p.main if isinstance(c, S.Chain)}
    if variant is not None and variant.coupled:
        # a plain-value respond frees the instance at once; the rest of main never runs
        body = [c for c in p.main if not isinstance(c, S.Comment)]
        for i, c in enumerate(body[:-1]):
            if isinstance(c, S.Respond) and c.promise is None:
                out.append(Diagnostic("warning", body[i + 1].line, "dead-after-respond",
                                      f"commands after respond() on line {c.line} never run "
                                      f"under the {variant.value} semantics"))
                break
    for extra in main_responds[1:]:
        out.append(Diagnostic("error", extra.line, "multiple-respond",
                              "more than one respond() on the main path"))
    for line, rs in handler_responds.items():
        if rs and main_responds:
            out.append(Diagnostic("error", line, "multiple-respond",
                                  "handler responds although the main body already does"))
        for extra in rs[1:]:
            out.append(Diagnostic("error", line, "multiple-respond",
                                  "more than one respond() in one handler"))
    return out


def errors(diags: list[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diags if d.severity == "error"]


def _exprs_of(c):
    if isinstance(c, S.Assign):
        yield c.expr
    elif isinstance(c, S.StartAsync):
        yield from _op_exprs(c.op)
    elif isinstance(c, S.Chain):
        r = c.handler.result
        if r is not None:
            yield from (_op_exprs(r) if c.handler.returns_async else (r,))
    elif isinstance(c, S.Respond) and c.expr is not None:
        yield c.expr


def _op_exprs(op):
    if isinstance(op, S.DbRead):
        yield op.conn
    elif isinstance(op, S.DbWrite):
        yield op.conn
        yield op.value


def _calls(e):
    if isinstance(e, S.ApplyBuiltin):
        yield e
        for a in e.args:
            yield from _calls(a)
    elif isinstance(e, S.Field):
        yield from _calls(e.expr)
    elif isinstance(e, S.RecordOf):
        for _, x in e.fields:
            yield from _calls(x)
    elif isinstance(e, S.ListOf):
        for x in e.items:
            yield from _calls(x)
