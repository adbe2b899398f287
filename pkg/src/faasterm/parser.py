"""Line-oriented parser and pretty-printer for the async-program DSL.

One command per line; ``#`` starts a comment. Commands are labelled with the
line they sit on, so blank lines matter: they keep line numbers aligned with
whatever listing a program transcribes.

Example::

    globals val, hash
    main event
    val = event.val
    p12 <- async db.connect(db)
    p13 = then(p12, con => async db.write(con, {val, hash}, entry))
    respond(p13)
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from . import syntax as S
from .values import UNDEFINED, Bool, Int, Str

__all__ = ["ParseError", "parse_program", "pretty", "pretty_expr", "pretty_op", "pretty_command"]


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int = 1):
        super().__init__(f"line {line}, col {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<comment>\#.*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<range>\.\.)
  | (?P<int>-?\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>=>|<-|[(){}\[\],:.=;*])
    """,
    re.VERBOSE,
)


@dataclass
class Tok:
    kind: str
    text: str
    col: int


def _tokenize(text: str, line: int) -> list[Tok]:
    toks: list[Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos + 1)
        kind = m.lastgroup
        if kind == "comment":
            break
        if kind != "ws":
            toks.append(Tok(kind, m.group(), pos + 1))
        pos = m.end()
    toks.append(Tok("eol", "", len(text) + 1))
    return toks


_NOTE = re.compile(r"\s*note(?:\s+([^#]*))?(?:#.*)?$")
_KEYWORDS = {"async", "then", "catch", "finally", "respond", "end", "do", "return", "note"}


class _LineParser:
    def __init__(self, text: str, line: int, globals_: tuple, promises: set):
        self.toks = _tokenize(text, line)
        self.i = 0
        self.line = line
        self.text = text
        self.globals = globals_
        self.promises = promises  # promise names in scope; mutated as bindings appear

    # -- token helpers
    def peek(self, k: int = 0) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> Tok:
        t = self.peek()
        self.i += 1
        return t

    def error(self, msg: str, tok: Tok | None = None):
        tok = tok or self.peek()
        return ParseError(msg, self.line, tok.col)

    def expect(self, text: str) -> Tok:
        t = self.next()
        if t.text != text:
            raise ParseError(f"expected {text!r}, found {t.text or 'end of line'!r}", self.line, t.col)
        return t

    def name(self) -> str:
        t = self.next()
        if t.kind != "name":
            raise ParseError(f"expected a name, found {t.text or 'end of line'!r}", self.line, t.col)
        return t.text

    def at(self, text: str, k: int = 0) -> bool:
        return self.peek(k).text == text and self.peek(k).kind != "string"

    def done(self):
        if self.peek().kind != "eol":
            raise self.error(f"unexpected {self.peek().text!r}")

    # -- expressions
    def expr(self) -> S.Expr:
        e = self.primary()
        while self.at("."):
            self.next()
            e = S.Field(e, self.name())
        return e

    def primary(self) -> S.Expr:
        t = self.peek()
        if t.kind == "int":
            self.next()
            return S.Lit(Int(int(t.text)))
        if t.kind == "string":
            self.next()
            return S.Lit(Str(json.loads(t.text)))
        if t.text == "{":
            self.next()
            fields = []
            while not self.at("}"):
                if self.peek().kind == "string":
                    key = json.loads(self.next().text)
                    if not self.at(":"):
                        raise self.error("a quoted key needs ': value'")
                else:
                    key = self.name()
                if self.at(":"):
                    self.next()
                    fields.append((key, self.expr()))
                else:
                    fields.append((key, S.Var(key)))
                if not self.at("}"):
                    self.expect(",")
            self.next()
            return S.RecordOf(tuple(fields))
        if t.text == "[":
            self.next()
            items = []
            while not self.at("]"):
                items.append(self.expr())
                if not self.at("]"):
                    self.expect(",")
            self.next()
            return S.ListOf(tuple(items))
        if t.text == "(":
            self.next()
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "name":
            self.next()
            if t.text == "true":
                return S.Lit(Bool(True))
            if t.text == "false":
                return S.Lit(Bool(False))
            if t.text == "undefined":
                return S.Lit(UNDEFINED)
            if self.at("("):
                if t.text not in S.BUILTINS:
                    raise ParseError(f"unknown function {t.text!r}", self.line, t.col)
                self.next()
                args = []
                while not self.at(")"):
                    args.append(self.expr())
                    if not self.at(")"):
                        self.expect(",")
                self.next()
                return S.ApplyBuiltin(t.text, tuple(args))
            return S.Var(t.text)
        raise self.error(f"expected an expression, found {t.text or 'end of line'!r}")

    # -- async operations
    def literal_key(self) -> str:
        t = self.next()
        if t.kind == "string":
            return json.loads(t.text)
        if t.kind == "name":
            return t.text
        raise ParseError("expected a key or service name", self.line, t.col)

    def async_op(self) -> S.AsyncOp:
        t = self.next()
        if t.text == "db":
            self.expect(".")
            which = self.next()
            self.expect("(")
            if which.text == "connect":
                args = (self.literal_key(),)
                self.expect(")")
                ctor, kw = S.DbConnect, {"service": args[0]}
            elif which.text == "read":
                conn = self.expr()
                self.expect(",")
                key = self.literal_key()
                self.expect(")")
                ctor, kw = S.DbRead, {"conn": conn, "key": key}
            elif which.text == "write":
                conn = self.expr()
                self.expect(",")
                val = self.expr()
                self.expect(",")
                key = self.literal_key()
                self.expect(")")
                ctor, kw = S.DbWrite, {"conn": conn, "value": val, "key": key}
            else:
                raise ParseError(f"unknown db operation {which.text!r}", self.line, which.col)
        elif t.text == "sleep":
            self.expect("(")
            n = self.next()
            if n.kind != "int":
                raise ParseError("sleep expects an integer tick count", self.line, n.col)
            self.expect(")")
            ctor, kw = S.Sleep, {"ticks": int(n.text)}
        elif t.text == "fail":
            self.expect("(")
            m = self.next()
            if m.kind != "string":
                raise ParseError("fail expects a string message", self.line, m.col)
            self.expect(")")
            ctor, kw = S.FailWith, {"message": json.loads(m.text)}
        else:
            raise ParseError(f"unknown async operation {t.text!r}", self.line, t.col)
        while self.at("latency") or self.at("deadline"):
            attr = self.next().text
            lo = self._int()
            if attr == "deadline":
                kw["deadline"] = lo
                continue
            hi = lo
            if self.at(".."):
                self.next()
                if self.at("*"):
                    self.next()
                    hi = None
                else:
                    hi = self._int()
            kw["latency"] = S.Latency(lo, hi)
        return ctor(**kw)

    def _int(self) -> int:
        t = self.next()
        if t.kind != "int":
            raise ParseError("expected an integer", self.line, t.col)
        return int(t.text)

    # -- statements
    def statement(self, in_handler: bool = False) -> S.Command:
        t = self.peek()
        if t.text == "note" and t.kind == "name":
            raise self.error("a note must stand on a line of its own")
        if t.text == "respond" and self.at("(", 1):
            self.next()
            self.next()
            if self.peek().kind == "name" and self.peek().text in self.promises and self.at(")", 1):
                name = self.next().text
                self.expect(")")
                return S.Respond(promise=name, line=self.line)
            e = self.expr()
            self.expect(")")
            return S.Respond(expr=e, line=self.line)
        if t.text == "end" and self.at("(", 1):
            self.next()
            self.next()
            self.expect(")")
            return S.End(self.line)
        if t.kind != "name":
            raise self.error(f"expected a statement, found {t.text or 'end of line'!r}")
        target = self.next().text
        if self.at("<-"):
            self.next()
            if not (self.peek().kind == "name" and self.peek().text == "async"):
                raise self.error("expected 'async' after '<-'")
            self.next()
            op = self.async_op()
            self.promises.add(target)
            return S.StartAsync(target, op, self.line)
        self.expect("=")
        head = self.peek()
        if head.kind == "name" and self.at("(", 1):
            if head.text in S.CHAIN_KINDS:
                if in_handler:
                    raise self.error("promise chaining is not allowed inside a handler", head)
                return self._chain(target)
            if head.text in S.COMBINATORS:
                if in_handler:
                    raise self.error("combinators are not allowed inside a handler", head)
                return self._combine(target)
        e = self.expr()
        scope = "global" if target in self.globals else "local"
        return S.Assign(scope, target, e, self.line)

    def _bound(self, tok: Tok) -> str:
        if tok.kind != "name":
            raise ParseError("expected a promise name", self.line, tok.col)
        if tok.text not in self.promises:
            raise ParseError(f"reference to unbound promise name {tok.text!r}", self.line, tok.col)
        return tok.text

    def _chain(self, target: str) -> S.Chain:
        kind = self.next().text
        self.expect("(")
        src = self._bound(self.next())
        self.expect(",")
        handler = self.handler()
        self.expect(")")
        self.promises.add(target)
        return S.CHAIN_KINDS[kind](src, target, handler, self.line)

    def _combine(self, target: str) -> S.Combine:
        kind = self.next().text
        self.expect("(")
        bracket = self.at("[")
        if bracket:
            self.next()
        close = "]" if bracket else ")"
        sources = []
        while not self.at(close):
            sources.append(self._bound(self.next()))
            if not self.at(close):
                self.expect(",")
        self.next()
        if bracket:
            self.expect(")")
        self.promises.add(target)
        return S.Combine(kind, tuple(sources), target, self.line)

    def handler(self) -> S.Handler:
        param = None
        if self.at("("):
            self.next()
            if not self.at(")"):
                param = self.name()
            self.expect(")")
        else:
            param = self.name()
        self.expect("=>")
        outer = self.promises
        self.promises = set(outer)
        try:
            return self._handler_body(param)
        finally:
            self.promises = outer

    def _handler_body(self, param) -> S.Handler:
        t = self.peek()
        if t.kind == "name" and t.text == "async":
            self.next()
            return S.Handler(param, (), self.async_op())
        if t.kind == "name" and t.text == "end" and self.at("(", 1):
            self.next()
            self.next()
            self.expect(")")
            return S.Handler(param, (S.End(self.line),), None)
        if t.kind == "name" and t.text == "do" and self.at("{", 1):
            self.next()
            self.next()
            body: list = []
            result = None
            while not self.at("}"):
                if self.peek().kind == "name" and self.peek().text == "return":
                    self.next()
                    if self.peek().kind == "name" and self.peek().text == "async":
                        self.next()
                        result = self.async_op()
                    else:
                        result = self.expr()
                    if not self.at("}"):
                        raise self.error("'return' must be the last statement of a block")
                    break
                body.append(self.statement(in_handler=True))
                if not self.at("}"):
                    self.expect(";")
            self.expect("}")
            return S.Handler(param, tuple(body), result)
        return S.Handler(param, (), self.expr())


def parse_program(text: str, name: str = "program") -> S.Program:
    """Parse DSL source into a :class:`~faasterm.syntax.Program`.

    Raises :class:`ParseError` (with line and column) on malformed input or a
    reference to an unbound promise name.
    """
    globals_: tuple = ()
    globals_line = 0
    main_line = 0
    param = "event"
    promises: set = set()
    commands = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        note = _NOTE.match(raw)
        if note and main_line:
            commands.append(S.Comment(note.group(1).strip(), lineno))
            continue
        toks = _tokenize(raw, lineno)
        if toks[0].kind == "eol":
            continue
        first = toks[0]
        if not main_line:
            if first.text == "globals" and not globals_line:
                names = [t for t in toks[1:-1] if t.text != ","]
                if any(t.kind != "name" for t in names):
                    bad = next(t for t in names if t.kind != "name")
                    raise ParseError("expected a global name", lineno, bad.col)
                globals_ = tuple(t.text for t in names)
                globals_line = lineno
                continue
            if first.text == "main":
                rest = [t for t in toks[1:-1] if t.text not in "()"]
                if len(rest) > 1 or (rest and rest[0].kind != "name"):
                    raise ParseError("expected 'main <param>'", lineno, first.col)
                if rest:
                    param = rest[0].text
                main_line = lineno
                continue
            raise ParseError("expected 'globals' or 'main' before statements", lineno, first.col)
        lp = _LineParser(raw, lineno, globals_, promises)
        cmd = lp.statement()
        lp.done()
        commands.append(cmd)
    if not main_line:
        if commands or globals_line:
            raise ParseError("missing 'main' line", max(globals_line, 1))
        main_line = 1
    return S.Program(globals_, tuple(commands), param, globals_line, main_line, name=name, source=text)


# -- pretty printing ----------------------------------------------------------

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def _lit(v) -> str:
    if isinstance(v, Str):
        return json.dumps(v.value)
    if isinstance(v, Bool):
        return "true" if v.value else "false"
    if isinstance(v, Int):
        return str(v.value)
    if v == UNDEFINED:
        return "undefined"
    raise ValueError(f"literal {v!r} has no source form")


def _key(k: str) -> str:
    return k if _IDENT.match(k) and k not in _KEYWORDS else json.dumps(k)


def _field(k: str, x: S.Expr) -> str:
    if isinstance(x, S.Var) and x.name == k and _key(k) == k:
        return k
    return f"{_key(k)}: {pretty_expr(x)}"


def pretty_expr(e: S.Expr) -> str:
    if isinstance(e, S.Lit):
        return _lit(e.value)
    if isinstance(e, S.Var):
        return e.name
    if isinstance(e, S.Field):
        return f"{pretty_expr(e.expr)}.{e.name}"
    if isinstance(e, S.RecordOf):
        return "{" + ", ".join(_field(k, x) for k, x in e.fields) + "}"
    if isinstance(e, S.ListOf):
        return "[" + ", ".join(pretty_expr(x) for x in e.items) + "]"
    if isinstance(e, S.ApplyBuiltin):
        return f"{e.builtin}(" + ", ".join(pretty_expr(a) for a in e.args) + ")"
    raise TypeError(e)


def _attrs(op: S.AsyncOp) -> str:
    out = ""
    lat = op.latency
    if lat is not None and (isinstance(op, S.Sleep) or lat != S.Latency()):
        hi = "*" if lat.hi is None else lat.hi
        out += f" latency {lat.lo}" if lat.hi == lat.lo else f" latency {lat.lo}..{hi}"
    if op.deadline is not None:
        out += f" deadline {op.deadline}"
    return out


def pretty_op(op: S.AsyncOp) -> str:
    if isinstance(op, S.DbConnect):
        core = f"db.connect({_key(op.service)})"
    elif isinstance(op, S.DbRead):
        core = f"db.read({pretty_expr(op.conn)}, {_key(op.key)})"
    elif isinstance(op, S.DbWrite):
        core = f"db.write({pretty_expr(op.conn)}, {pretty_expr(op.value)}, {_key(op.key)})"
    elif isinstance(op, S.Sleep):
        core = f"sleep({op.ticks})"
    elif isinstance(op, S.FailWith):
        core = f"fail({json.dumps(op.message)})"
    else:
        raise TypeError(op)
    return core + _attrs(op)


def pretty_handler(h: S.Handler) -> str:
    head = f"{h.param} =>" if h.param else "() =>"
    if not h.body and h.result is not None:
        body = f"async {pretty_op(h.result)}" if h.returns_async else pretty_expr(h.result)
    elif h.result is None and len(h.body) == 1 and isinstance(h.body[0], S.End):
        body = "end()"
    else:
        parts = [pretty_command(c) for c in h.body]
        if h.result is not None:
            parts.append("return " + (f"async {pretty_op(h.result)}" if h.returns_async else pretty_expr(h.result)))
        body = "do { " + "; ".join(parts) + " }" if parts else "do { }"
    return f"{head} {body}"


def pretty_command(c: S.Command) -> str:
    if isinstance(c, S.Assign):
        return f"{c.name} = {pretty_expr(c.expr)}"
    if isinstance(c, S.StartAsync):
        return f"{c.target} <- async {pretty_op(c.op)}"
    if isinstance(c, S.Chain):
        return f"{c.target} = {c.kind}({c.source}, {pretty_handler(c.handler)})"
    if isinstance(c, S.Combine):
        return f"{c.target} = {c.kind}(" + ", ".join(c.sources) + ")"
    if isinstance(c, S.Respond):
        return f"respond({c.promise})" if c.promise else f"respond({pretty_expr(c.expr)})"
    if isinstance(c, S.End):
        return "end()"
    if isinstance(c, S.Comment):
        return f"note {c.label}"
    raise TypeError(c)


def pretty(p: S.Program) -> str:
    """Render ``p`` as source, placing every command on its labelled line."""
    lines: dict[int, str] = {}
    if p.globals_line:
        lines[p.globals_line] = "globals " + ", ".join(p.globals)
    lines[p.main_line] = f"main {p.param}"
    for c in p.main:
        if c.line in lines:
            raise ValueError(f"two commands share line {c.line}")
        lines[c.line] = pretty_command(c)
    last = max(lines)
    return "\n".join(lines.get(i, "") for i in range(1, last + 1)) + "\n"
