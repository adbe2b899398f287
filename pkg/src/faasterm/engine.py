"""Execution engine: drives a program under one semantics variant.

The engine owns the environment around the function state: promise records,
in-flight I/O, the external store, per-event frames, the event queue and a
virtual clock. Every change to the function state goes through
:func:`faasterm.semantics.step`, so a scheduler bug surfaces as a
:class:`~faasterm.semantics.PremiseViolation` instead of a silently wrong run.

Scheduling model
----------------
A choice point sits before every visible mainline command. At each one the
schedule may continue the mainline or complete any in-flight I/O operation
(only while an event is being processed; between events the environment is
frozen). When the function is free and events are queued, it may start the
next event or, under the reuse family of variants, be invalidated.

Promise reactions are not choice points: after every step, runnable
reactions drain FIFO. Then the engine performs whatever is forced: sending a
ready response, honouring a requested ``end()`` once nothing is pending, and
starting a fresh instance when the old one is done and events remain.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from . import syntax as S
from .evaluate import eval_expr
from .parser import pretty_command, pretty_expr, pretty_handler, pretty_op
from .trace import Step
from .promises import (
    COMBINATOR, FULFILLED, IO, REACTION, REJECTED, PromiseRecord, attach, decide,
    reaction_fires, settle,
)
from .semantics import (
    DONE, FREE, EndCall, FunctionState, Invalidate, LocalStep, Receive, Resolve, Respond,
    StartAsync, Variant, action_to_json, initial_state, premise_holds, step,
)
from .values import UNDEFINED, ErrorVal, Record, Stored, Str, Value, display, from_python, provenance_of

# -- errors ---------------------------------------------------------------------


class ScheduleExhausted(Exception):
    """A scripted schedule ran out of choices before the run finished."""


class ScheduleError(ValueError):
    """A scripted choice index is out of range for the choices on offer."""


class ReplayDivergence(Exception):
    def __init__(self, index: int, message: str = ""):
        super().__init__(f"replay diverges at step {index}" + (f": {message}" if message else ""))
        self.index = index


class NotSuspended(ValueError):
    """``suspend_resume`` needs the function to be between events."""


# -- world ----------------------------------------------------------------------


@dataclass(frozen=True)
class IoEntry:
    pid: int
    op: S.AsyncOp
    args: tuple  # evaluated operands: (conn,) for reads, (conn, value) for writes
    issued_at: int
    latency: int
    poisoned: bool = False

    @property
    def deadline(self) -> int | None:
        return self.op.deadline

    @property
    def due(self) -> int:
        return self.issued_at + self.latency

    def key(self) -> tuple:
        return (self.pid, self.poisoned, tuple(a.ckey for a in self.args))


@dataclass(frozen=True)
class Frame:
    values: tuple = ()  # ((name, Value), ...) in binding order
    promises: tuple = ()  # ((name, pid), ...)

    def value_map(self) -> dict:
        return dict(self.values)

    def promise_map(self) -> dict:
        return dict(self.promises)

    def bind_value(self, name: str, v: Value) -> "Frame":
        d = dict(self.values)
        d[name] = v
        return replace(self, values=tuple(d.items()))

    def bind_promise(self, name: str, pid: int) -> "Frame":
        d = dict(self.promises)
        d[name] = pid
        return replace(self, promises=tuple(d.items()))

    def key(self) -> tuple:
        return (tuple(sorted((k, v.ckey) for k, v in self.values)), tuple(sorted(self.promises)))


@dataclass(frozen=True)
class EventInfo:
    eid: int
    payload: Value
    instance: int
    pc: int = 0  # next mainline command
    response_pid: int | None = None
    response_value: Value | None = None
    responded: bool = False
    end_requested: bool = False
    ended: bool = False
    end_via: int | None = None  # reaction whose handler called end(); None: main body
    received_at: int = 0
    responded_at: int | None = None
    ended_at: int | None = None

    def key(self) -> tuple:
        rv = None if self.response_value is None else self.response_value.ckey
        return (self.eid, self.payload.ckey, self.instance, self.pc, self.response_pid, rv,
                self.responded, self.end_requested, self.ended, self.end_via)


@dataclass
class World:
    fn: FunctionState
    promises: dict
    io: dict
    db: dict
    connects: dict
    frames: dict
    events: dict
    queue: tuple
    next_eid: int = 1
    next_pid: int = 1
    instance: int = 1
    clock: int = 0
    issued: int = 0
    # observations, append-only
    responses: tuple = ()  # ((eid, Value), ...)
    effects: tuple = ()  # ("respond", eid) | ("write", key, eid) | ("end", eid)
    interference: tuple = ()  # ((pid, site, origin, during), ...)
    stale: tuple = ()  # ((key, Value, events, during), ...)
    broken: tuple = ()  # ((instance, pid), ...)
    diagnostics: tuple = ()
    stopped: tuple = ()  # instances that were stopped or invalidated
    latencies: tuple = ()  # latency chosen for each issued op, in issue order
    rows: list | None = None
    jobs: deque = field(default_factory=deque)
    fold_respond: bool = False

    def clone(self) -> "World":
        w = replace(self)
        for name in ("promises", "io", "db", "connects", "frames", "events"):
            setattr(w, name, dict(getattr(self, name)))
        w.rows = None if self.rows is None else list(self.rows)
        w.jobs = deque()
        return w

    @property
    def current(self) -> int | None:
        return self.fn.event if isinstance(self.fn.event, int) else None

    def key(self, timing: bool = False) -> tuple:
        """Canonical, hashable identity of the state (clock excluded unless ``timing``)."""
        k = (
            tuple((n, v.ckey) for n, v in self.fn.memory), self.fn.event,
            tuple(sorted(self.fn.pending)),
            tuple(self.promises[p].key() for p in sorted(self.promises)),
            tuple(self.io[p].key() for p in sorted(self.io)),
            tuple(sorted((k, v.ckey) for k, v in self.db.items())),
            tuple(sorted(self.connects.items())),
            tuple((e, self.frames[e].key()) for e in sorted(self.frames)),
            tuple(self.events[e].key() for e in sorted(self.events)),
            tuple(v.ckey for v in self.queue),
            self.next_eid, self.next_pid, self.instance,
            tuple((e, v.ckey) for e, v in self.responses), self.effects, self.interference,
            tuple((k, v.ckey, ev, d) for k, v, ev, d in self.stale), self.broken,
            self.diagnostics, self.stopped,
        )
        if timing:
            k += (self.clock, tuple((p, e.issued_at, e.latency) for p, e in sorted(self.io.items())))
        return k


# -- wording ------------------------------------------------------------------------

_NOUN = {S.DbConnect: "connection", S.DbRead: "read", S.DbWrite: "write", S.Sleep: "sleep",
         S.FailWith: "operation"}
_DONE_WORD = {S.DbConnect: "established", S.DbRead: "finished", S.DbWrite: "finished",
              S.Sleep: "finished", S.FailWith: "finished"}


def _started(op) -> str:
    return f"{_NOUN[type(op)]} started"


def _resolved(op, outcome: str) -> str:
    return f"{_NOUN[type(op)]} {_DONE_WORD[type(op)] if outcome == FULFILLED else 'failed'}"


def _issued_text(op, args: tuple) -> str:
    """Command column for an I/O row: operands shown evaluated where useful."""
    if isinstance(op, S.DbWrite):
        return f"con.write({display(args[1])})"
    if isinstance(op, S.DbRead):
        return f"con.read({op.key})"
    if isinstance(op, S.DbConnect):
        return f"db.connect({op.service})"
    return pretty_op(op)


def _is_connection(v: Value) -> bool:
    return isinstance(v, Record) and isinstance(v.get("connection"), Str)


# -- engine ------------------------------------------------------------------------

Choice = tuple


class Engine:
    """Transition system for one program under one variant.

    ``platform_controls_invalidate`` hands instance lifecycle to an outside
    driver (the invoker): no Invalidate choices and no automatic fresh
    instance when the current one is done.
    """

    def __init__(self, program: S.Program, variant: Variant | str, *,
                 platform_controls_invalidate: bool = False):
        self.program = program
        self.variant = Variant.parse(variant)
        self.platform = platform_controls_invalidate
        self.handlers = program.handlers()
        self.main = program.main
        self.latency_for: Callable[[S.AsyncOp, int], int] = lambda op, i: S.op_latency(op).lo
        # called as on_action(before, action, after, world) for every rule applied
        self.on_action: Callable | None = None

    # -- setup

    def initial(self, events: Sequence, *, record: bool = True) -> World:
        queue = tuple(from_python(e) for e in events)
        return World(initial_state(), {}, {}, {}, {}, {}, {}, queue,
                     rows=[] if record else None)

    def push_event(self, w: World, payload) -> None:
        w.queue = w.queue + (from_python(payload),)

    # -- choices

    def choices(self, w: World) -> list[Choice]:
        cur = w.fn.event
        if isinstance(cur, int):
            out: list[Choice] = []
            if w.events[cur].pc < len(self.main):
                out.append(("step",))
            out.extend(("resolve", p) for p in sorted(w.io) if p in w.fn.pending)
            return out
        if cur == FREE and w.queue:
            out = [("receive",)]
            # invalidating a fresh instance would only spawn an identical one
            used = any(i.instance == w.instance for i in w.events.values())
            if self.variant is not Variant.SINGLE and not self.platform and used:
                out.append(("invalidate",))
            return out
        return []

    def apply(self, w: World, choice: Choice) -> None:
        """Take ``choice`` in place, then drain reactions and forced steps."""
        kind = choice[0]
        if kind == "step":
            self._mainline(w)
        elif kind == "resolve":
            self._resolve_io(w, choice[1])
        elif kind == "receive":
            self._receive(w)
        elif kind == "invalidate":
            self._invalidate(w)
        else:
            raise ValueError(f"unknown choice {choice!r}")
        self.settle_down(w)

    def settle_down(self, w: World) -> None:
        self._drain(w)
        self._forced(w)

    # -- helpers

    def _act(self, w: World, action) -> None:
        before = w.fn
        w.fn, _ = step(w.fn, action, self.variant)
        if self.on_action is not None:
            self.on_action(before, action, w.fn, w)

    def _row(self, w: World, kind: str, loc: int | str, command: str, comment: str = "", *,
             visible: bool = True, state: bool = False, pid: int | None = None,
             action=None, data: dict | None = None) -> None:
        if visible:
            w.fold_respond = False
        if w.rows is None:
            return
        loc_s = loc if isinstance(loc, str) else f"l{loc}"
        snap = self._snapshot(w) if state else ()
        pr = tuple(sorted(w.fn.pending))
        unresolved = tuple((w.promises[p].site, w.promises[p].desc) for p in pr)
        origin = w.promises[pid].origin if pid is not None and pid in w.promises else None
        w.rows.append(Step(kind, loc_s, command, comment, visible, snap, unresolved, pr, w.fn.event,
                           w.instance, pid, origin,
                           None if action is None else action_to_json(action), data or {}))

    def _snapshot(self, w: World) -> tuple:
        out = [(g, display(w.fn.lookup(g) or UNDEFINED)) for g in self.program.globals]
        eid = w.current
        if eid is not None:
            for name, v in w.frames[eid].values:
                out.append((name, display(v)))
        return tuple(out)

    def _new_promise(self, w: World, **kw) -> int:
        pid = w.next_pid
        w.next_pid += 1
        w.promises[pid] = PromiseRecord(id=pid, instance=w.instance, **kw)
        return pid

    def _issue(self, w: World, op: S.AsyncOp, line: int, origin: int, args: tuple,
               adopter: int | None = None, parents: tuple = ()) -> int:
        pid = self._new_promise(w, origin=origin, site=f"p{line}", line=line, kind=IO,
                                desc=S.op_name(op), parents=parents, adopter=adopter,
                                started=True)
        lat = self.latency_for(op, w.issued)
        w.issued += 1
        w.latencies = w.latencies + (lat,)
        w.io[pid] = IoEntry(pid, op, args, w.clock, lat)
        action = StartAsync(pid)
        self._act(w, action)
        self._row(w, "start", line, _issued_text(op, args), _started(op), pid=pid, action=action)
        return pid

    def _op_args(self, op, memory, locals_, eid) -> tuple:
        if isinstance(op, S.DbRead):
            return (eval_expr(op.conn, memory, locals_, eid),)
        if isinstance(op, S.DbWrite):
            return (eval_expr(op.conn, memory, locals_, eid), eval_expr(op.value, memory, locals_, eid))
        return ()

    def _diag(self, w: World, msg: str) -> None:
        w.diagnostics = w.diagnostics + (msg,)
        self._row(w, "diagnostic", "-", msg, "diagnostic", visible=False)

    # -- mainline

    def _silent(self, c) -> bool:
        return isinstance(c, (S.Chain, S.Combine, S.Comment)) or (
            isinstance(c, S.Respond) and c.promise is not None)

    def _mainline(self, w: World) -> None:
        eid = w.current
        self._command(w, eid)
        # registrations have no observable effect on their own; run them in the same step
        while w.current == eid and w.events[eid].pc < len(self.main) and self._silent(self.main[w.events[eid].pc]):
            self._command(w, eid)

    def _command(self, w: World, eid: int) -> None:
        info = w.events[eid]
        c = self.main[info.pc]
        w.events[eid] = replace(info, pc=info.pc + 1)
        w.clock += 1
        frame = w.frames[eid]
        if isinstance(c, S.Assign):
            v = eval_expr(c.expr, w.fn.mem, frame.value_map(), eid)
            writes = ((c.name, v),) if c.scope == "global" else ()
            if c.scope != "global":
                w.frames[eid] = frame.bind_value(c.name, v)
            action = LocalStep(pretty_command(c), writes)
            self._act(w, action)
            self._row(w, "assign", c.line, pretty_command(c), state=True, action=action)
        elif isinstance(c, S.StartAsync):
            args = self._op_args(c.op, w.fn.mem, frame.value_map(), eid)
            pid = self._issue(w, c.op, c.line, eid, args)
            w.frames[eid] = w.frames[eid].bind_promise(c.target, pid)
        elif isinstance(c, S.Chain):
            src = frame.promise_map()[c.source]
            self._register(w, c, src, eid)
        elif isinstance(c, S.Combine):
            self._combine(w, c, eid)
        elif isinstance(c, S.Respond):
            self._respond_cmd(w, c, eid, frame.value_map(), frame.promise_map())
        elif isinstance(c, S.End):
            self._end_cmd(w, c, eid)
        elif isinstance(c, S.Comment):
            action = LocalStep(f"note {c.label}")
            self._act(w, action)
            self._row(w, "note", c.line, c.label, visible=False, action=action)
        else:
            raise TypeError(f"unknown command {c!r}")

    def _register(self, w: World, c: S.Chain, src: int, eid: int) -> None:
        h = c.handler
        desc = f"{c.kind}()"
        rid = self._new_promise(w, origin=eid, site=f"p{c.line}", line=c.line, kind=REACTION,
                                desc=desc, chain=c.kind, parents=(src,),
                                handler_op=S.op_name(h.result) if h.returns_async else None)
        w.promises[src], runnable = attach(w.promises[src], rid)
        w.jobs.extend(("react", r) for r in runnable)
        w.frames[eid] = w.frames[eid].bind_promise(c.target, rid)
        action = LocalStep(pretty_command(c))
        self._act(w, action)
        self._row(w, "register", c.line, pretty_command(c), visible=False, pid=rid, action=action)

    def _combine(self, w: World, c: S.Combine, eid: int) -> None:
        members = tuple(w.frames[eid].promise_map()[s] for s in c.sources)
        cid = self._new_promise(w, origin=eid, site=f"p{c.line}", line=c.line, kind=COMBINATOR,
                                desc=c.kind, chain=c.kind, parents=members)
        for m in dict.fromkeys(members):
            rec = w.promises[m]
            w.promises[m] = replace(rec, dependents=rec.dependents + (cid,))
        w.frames[eid] = w.frames[eid].bind_promise(c.target, cid)
        action = LocalStep(pretty_command(c))
        self._act(w, action)
        self._row(w, "register", c.line, pretty_command(c), visible=False, pid=cid, action=action)
        got = decide(c.kind, [(w.promises[m].state, w.promises[m].value) for m in members])
        if got is not None:
            self._settle_combinator(w, cid, *got)

    def _respond_cmd(self, w: World, c: S.Respond, eid: int, locals_: dict, promises: dict) -> None:
        info = w.events[eid]
        if info.response_pid is not None or info.response_value is not None or info.responded:
            self._diag(w, f"event {eid}: second respond() on line {c.line} ignored")
            self._act(w, LocalStep("respond (ignored)"))
            return
        if c.promise is not None:
            pid = promises[c.promise]
            rec = w.promises[pid]
            if rec.kind == REACTION and rec.handler_op is None:
                w.promises[pid] = replace(rec, desc="produce response")
            w.events[eid] = replace(info, response_pid=pid)
            action = LocalStep(pretty_command(c))
            self._act(w, action)
            self._row(w, "register", c.line, pretty_command(c), visible=False, pid=pid, action=action)
            if not rec.pending:
                self._response_ready(w, pid)
        else:
            v = eval_expr(c.expr, w.fn.mem, locals_, eid)
            w.events[eid] = replace(info, response_value=v)
            action = LocalStep(pretty_command(c))
            self._act(w, action)
            self._row(w, "respond-value", c.line, display(v), "response produced", action=action)
            w.fold_respond = True

    def _end_cmd(self, w: World, c: S.End, eid: int | None, via: int | None = None) -> None:
        action = LocalStep("end()")
        self._act(w, action)
        data = {"event": eid, "promise": via}
        if self.variant is not Variant.DECOUPLED:
            self._row(w, "end-request", c.line, "end()", "ignored", action=action, data=data)
            self._diag(w, f"end() on line {c.line} has no effect under {self.variant.value}")
            return
        info = w.events[eid]
        if not info.end_requested:
            w.events[eid] = replace(info, end_requested=True, end_via=via)
        self._row(w, "end-request", c.line, "end()", "end requested", action=action, data=data)

    # -- reactions

    def _drain(self, w: World) -> None:
        while w.jobs:
            job = w.jobs.popleft()
            if job[0] == "react":
                self._react(w, job[1])
            else:
                self._combine_job(w, job[1], job[2])

    def _settle(self, w: World, pid: int, outcome: str, value: Value) -> None:
        w.promises[pid], runnable = settle(w.promises[pid], outcome, value)
        rec = w.promises[pid]
        w.jobs.extend(("react", r) for r in runnable)
        w.jobs.extend(("combine", d, pid) for d in rec.dependents)
        if rec.adopter is not None and w.promises[rec.adopter].pending:
            self._row(w, "adopt", rec.line, f"{rec.site} -> {w.promises[rec.adopter].site}",
                      visible=False, pid=rec.adopter)
            self._settle(w, rec.adopter, outcome, value)
        self._response_ready(w, pid)

    def _response_ready(self, w: World, pid: int) -> None:
        rec = w.promises[pid]
        for e, info in list(w.events.items()):
            if info.response_pid == pid and info.response_value is None:
                w.events[e] = replace(info, response_value=rec.value)

    def _react(self, w: World, rid: int) -> None:
        r = w.promises[rid]
        parent = w.promises[r.parents[0]]
        if not reaction_fires(r.chain, parent.state):
            self._row(w, "passthrough", r.line, f"{r.site} <- {parent.site}", visible=False, pid=rid)
            self._settle(w, rid, parent.state, parent.value)
            return
        chain = self.handlers[r.line]
        h = chain.handler
        eid = w.current
        locals_ = w.frames[r.origin].value_map() if r.origin in w.frames else {}
        if h.param is not None and r.chain != "finally":
            locals_[h.param] = parent.value
        w.clock += 1
        value_handler = not h.returns_async
        responding = any(i.response_pid == rid for i in w.events.values())
        noun = "response" if responding else "handler"
        if value_handler:
            w.promises[rid] = replace(r, started=True)
            action = StartAsync(rid)
            self._act(w, action)
            self._row(w, "run", r.line, pretty_handler(h), f"{noun} started", pid=rid, action=action)
        for c in h.body:
            self._handler_command(w, c, r, locals_, eid)
        if value_handler:
            result = UNDEFINED if h.result is None else eval_expr(h.result, w.fn.mem, locals_, eid)
            if r.chain == "finally":
                outcome, result = parent.state, parent.value
            else:
                outcome = FULFILLED
            action = Resolve(rid, outcome, result)
            self._act(w, action)
            self._row(w, "resolve", r.line, display(result),
                      "response produced" if responding else "handler finished", pid=rid, action=action,
                      data={"outcome": outcome})
            if responding:
                w.fold_respond = True
            self._settle(w, rid, outcome, result)
        else:
            args = self._op_args(h.result, w.fn.mem, locals_, eid)
            oid = self._issue(w, h.result, r.line, r.origin, args, adopter=rid, parents=(parent.id,))
            w.promises[rid] = replace(w.promises[rid], adopted=oid)

    def _handler_command(self, w: World, c, r: PromiseRecord, locals_: dict, eid: int | None) -> None:
        if isinstance(c, S.Assign):
            v = eval_expr(c.expr, w.fn.mem, locals_, eid)
            if c.scope == "global":
                action = LocalStep(pretty_command(c), ((c.name, v),))
                self._act(w, action)
                self._row(w, "assign", r.line, pretty_command(c), state=True, action=action)
            else:
                locals_[c.name] = v
        elif isinstance(c, S.StartAsync):
            args = self._op_args(c.op, w.fn.mem, locals_, eid)
            self._issue(w, c.op, r.line, r.origin, args, parents=(r.id,))
        elif isinstance(c, S.Respond):
            target = eid if eid is not None else r.origin
            if c.promise is not None:
                self._diag(w, f"respond({c.promise}) inside a handler on line {r.line} ignored")
                return
            info = w.events[target]
            if info.response_value is not None or info.response_pid is not None or info.responded:
                self._diag(w, f"event {target}: second respond() on line {r.line} ignored")
                return
            v = eval_expr(c.expr, w.fn.mem, locals_, eid)
            w.events[target] = replace(info, response_value=v)
            self._row(w, "respond-value", r.line, display(v), "response produced", visible=False)
        elif isinstance(c, S.End):
            self._end_cmd(w, S.End(r.line), eid if eid is not None else r.origin, via=r.id)
        elif isinstance(c, S.Comment):
            pass
        else:
            raise TypeError(f"command not allowed in a handler: {c!r}")

    def _combine_job(self, w: World, cid: int, trigger: int) -> None:
        c = w.promises[cid]
        if not c.pending:
            return
        members = [(w.promises[m].state, w.promises[m].value) for m in c.parents]
        got = decide(c.chain, members, c.parents.index(trigger))
        if got is not None:
            self._settle_combinator(w, cid, *got)

    def _settle_combinator(self, w: World, cid: int, outcome: str, value: Value) -> None:
        c = w.promises[cid]
        names = ", ".join(w.promises[m].site for m in c.parents)
        self._row(w, "settle", c.line, f"{c.chain}({names})", f"{c.chain} {outcome}", pid=cid,
                  data={"outcome": outcome})
        self._settle(w, cid, outcome, value)

    # -- I/O completion

    def _resolve_io(self, w: World, pid: int) -> None:
        entry = w.io.pop(pid)
        rec = w.promises[pid]
        op = entry.op
        eid = w.current
        here = () if eid is None else (eid,)
        w.clock = max(w.clock, entry.due)
        data: dict = {}
        if entry.poisoned:
            outcome, value = REJECTED, ErrorVal("peer timeout", prov=frozenset(here))
        elif isinstance(op, S.DbConnect):
            w.connects[op.service] = w.connects.get(op.service, 0) + 1
            outcome, value = FULFILLED, Record((("connection", Str(op.service)),), prov=frozenset(here))
        elif isinstance(op, (S.DbRead, S.DbWrite)) and not _is_connection(entry.args[0]):
            outcome, value = REJECTED, ErrorVal("not a connection", prov=frozenset(here))
        elif isinstance(op, S.DbRead):
            got = w.db.get(op.key)
            outcome = FULFILLED
            value = (got if got is not None else Stored(op.key)).tagged(here)
        elif isinstance(op, S.DbWrite):
            written = entry.args[1]
            w.db[op.key] = written
            events = tuple(sorted(provenance_of(written)))
            data = {"key": op.key, "value": display(written), "provenance": list(events),
                    "during": eid}
            w.effects = w.effects + (("write", op.key, eid),)
            if any(e != eid for e in events):
                w.stale = w.stale + ((op.key, written, events, eid),)
            outcome, value = FULFILLED, UNDEFINED.tagged(here)
        elif isinstance(op, S.Sleep):
            outcome, value = FULFILLED, UNDEFINED.tagged(here)
        elif isinstance(op, S.FailWith):
            outcome, value = REJECTED, ErrorVal(op.message, prov=frozenset(here))
        else:
            raise TypeError(op)
        if rec.origin != eid:
            w.interference = w.interference + ((pid, rec.site, rec.origin, eid),)
        action = Resolve(pid, outcome, value)
        self._act(w, action)
        data["outcome"] = outcome
        self._row(w, "resolve", rec.line, _issued_text(op, entry.args), _resolved(op, outcome),
                  pid=pid, action=action, data=data)
        self._settle(w, pid, outcome, value)

    # -- events and lifecycle

    def _receive(self, w: World) -> None:
        eid = w.next_eid
        w.next_eid += 1
        payload = w.queue[0].tagged((eid,))
        w.queue = w.queue[1:]
        carried = sorted(w.fn.pending)
        action = Receive(payload, eid)
        self._act(w, action)
        w.frames[eid] = Frame(values=((self.program.param, payload),))
        w.events[eid] = EventInfo(eid, payload, w.instance, received_at=w.clock)
        comment = ""
        if carried:
            sites = ", ".join(w.promises[p].site for p in carried)
            comment = f"promise{'s' if len(carried) > 1 else ''} {sites} carried over from previous run"
        self._row(w, "receive", self.program.main_line, f"main({self.program.param})", comment,
                  state=True, action=action)

    def _invalidate(self, w: World) -> None:
        action = Invalidate()
        self._act(w, action)
        self._stop_instance(w)
        self._row(w, "invalidate", "-", "invalidate", "environment invalidated", action=action)

    def _stop_instance(self, w: World) -> None:
        """Record the current instance's residual as broken; it never runs again."""
        if w.instance in w.stopped:
            return
        w.stopped = w.stopped + (w.instance,)
        w.broken = w.broken + tuple((w.instance, p) for p in sorted(w.fn.pending))
        # in-flight work of a dead environment never completes
        for p in w.fn.pending:
            w.io.pop(p, None)

    def spawn(self, w: World) -> None:
        self._stop_instance(w)
        w.instance += 1
        w.fn = initial_state()
        self._row(w, "spawn", "-", "new instance", "fresh execution environment")

    def _forced(self, w: World) -> None:
        while True:
            eid = w.current
            if eid is not None:
                info = w.events[eid]
                main_done = info.pc >= len(self.main)
                if (not self.program.has_respond and main_done and not info.responded
                        and info.response_value is None):
                    w.events[eid] = info = replace(info, response_value=UNDEFINED.tagged((eid,)))
                if info.response_value is not None and not info.responded:
                    if self._try_respond(w, eid):
                        continue
                if (info.end_requested and not info.ended and main_done
                        and self.variant is Variant.DECOUPLED and not w.fn.pending):
                    self._end_call(w, eid)
                    continue
                return
            if w.fn.event == DONE and w.queue and not self.platform:
                self.spawn(w)
                continue
            return

    def _try_respond(self, w: World, eid: int) -> bool:
        info = w.events[eid]
        v = info.response_value
        writes = LocalStep("response", (("response", v),))
        trial = w.fn.with_writes(writes.writes)
        action = Respond(v)
        if not premise_holds(trial, action, self.variant):
            return False
        self._act(w, writes)
        folded = w.fold_respond
        self._act(w, action)
        w.events[eid] = replace(info, responded=True, responded_at=w.clock)
        w.responses = w.responses + ((eid, v),)
        w.effects = w.effects + (("respond", eid),)
        line = self._respond_line()
        self._row(w, "respond", line, f"respond({display(v)})", "response sent", visible=not folded,
                  action=action, data={"event": eid, "value": display(v), "promise": info.response_pid})
        return True

    def _respond_line(self) -> int:
        for c in self.program.commands():
            if isinstance(c, S.Respond):
                return c.line
        return self.main[-1].line if self.main else self.program.main_line

    def _end_call(self, w: World, eid: int) -> None:
        info = w.events[eid]
        if not info.responded:
            self._diag(w, f"event {eid} ended before responding")
        action = EndCall()
        self._act(w, action)
        w.events[eid] = replace(w.events[eid], ended=True, ended_at=w.clock)
        w.effects = w.effects + (("end", eid),)
        if info.end_via is not None:
            line = w.promises[info.end_via].line
        else:
            line = next((c.line for c in self.main if isinstance(c, S.End)), "-")
        self._row(w, "end", line, "end()", "event processing ended", action=action,
                  data={"event": eid, "promise": info.end_via})

    # -- end of run

    def finish(self, w: World) -> None:
        """Close the run: a stopped function's residual promises are broken."""
        if w.current is None:
            self._stop_instance(w)

    def outcome(self, w: World) -> tuple:
        """Canonical summary of a terminal world, used to group schedules."""
        site = lambda p: (w.promises[p].site, w.promises[p].origin)  # noqa: E731
        broken = list(w.broken)
        if w.current is None and w.instance not in w.stopped:
            broken += [(w.instance, p) for p in sorted(w.fn.pending)]
        return (
            "stuck" if w.current is not None else "done",
            tuple(sorted((k, v.ckey) for k, v in w.db.items())),
            tuple((e, v.ckey) for e, v in w.responses),
            tuple(sorted((i,) + site(p) for i, p in broken)),
            tuple(sorted(site(p) for p in w.fn.pending)),
            tuple(sorted((s, o, d) for _, s, o, d in w.interference)),
            tuple(sorted((k, v.ckey, ev) for k, v, ev, _ in w.stale)),
            w.effects,
            len(w.queue),
        )


# -- deadlines ---------------------------------------------------------------------


def suspend_resume(w: World, ticks: int) -> World:
    """Freeze the environment for ``ticks`` and resume it.

    In-flight operations whose protocol deadline passes while frozen are
    poisoned: they will complete with a ``peer timeout`` rejection.
    """
    if w.current is not None:
        raise NotSuspended(f"function is processing event {w.current}")
    if ticks < 0:
        raise ValueError("ticks must be non-negative")
    out = w.clone()
    horizon = w.clock + ticks
    if ticks > 0:
        for pid, e in w.io.items():
            if e.deadline is not None and e.issued_at + e.deadline < horizon:
                out.io[pid] = replace(e, poisoned=True)
    out.clock = horizon
    return out


# -- schedule sources ------------------------------------------------------------


class Scripted:
    """Explicit choice indices, consumed only where two or more choices exist."""

    def __init__(self, choices: Sequence[int], latencies: Sequence[int] | None = None):
        self.choices = list(choices)
        self.latencies = None if latencies is None else list(latencies)
        self.cursor = 0

    def choose(self, w: World, options: list[Choice]) -> int:
        if self.cursor >= len(self.choices):
            raise ScheduleExhausted(f"script has {len(self.choices)} choices; more are needed")
        i = self.choices[self.cursor]
        self.cursor += 1
        if not 0 <= i < len(options):
            raise ScheduleError(f"choice {i} out of range at decision {self.cursor - 1} "
                                f"({len(options)} options)")
        return i

    def latency(self, op: S.AsyncOp, index: int) -> int:
        if self.latencies is not None and index < len(self.latencies):
            return self.latencies[index]
        return S.op_latency(op).lo


class Seeded:
    """Pseudo-random but reproducible schedule driven by sampled latencies.

    Completed I/O is delivered first (earliest due, lowest id on ties); otherwise
    the mainline advances; otherwise time jumps to the next due operation.
    """

    DEFAULT_HI = 10

    def __init__(self, seed: int, invalidate_prob: float = 0.25):
        self.seed = seed
        self.rng = random.Random(seed)
        self.invalidate_prob = invalidate_prob

    def latency(self, op: S.AsyncOp, index: int) -> int:
        lat = S.op_latency(op)
        hi = lat.hi if lat.hi is not None else max(lat.lo, self.DEFAULT_HI)
        return self.rng.randint(lat.lo, hi)

    def choose(self, w: World, options: list[Choice]) -> int:
        if options[0] == ("receive",):
            if len(options) > 1 and self.rng.random() < self.invalidate_prob:
                return options.index(("invalidate",))
            return 0
        due = sorted((w.io[c[1]].due, c[1], i) for i, c in enumerate(options) if c[0] == "resolve")
        if due and due[0][0] <= w.clock:
            return due[0][2]
        if ("step",) in options:
            return options.index(("step",))
        return due[0][2]


def drive(engine: Engine, w: World, source, taken: list[int] | None = None,
          stop: Callable[[World], bool] | None = None) -> World:
    """Run ``w`` forward until no choice remains (or ``stop`` says so)."""
    engine.latency_for = source.latency
    engine.settle_down(w)
    while stop is None or not stop(w):
        options = engine.choices(w)
        if not options:
            break
        if len(options) == 1:
            i = 0
        else:
            i = source.choose(w, options)
            if taken is not None:
                taken.append(i)
        engine.apply(w, options[i])
    return w


# -- runs ----------------------------------------------------------------------------


def _events_json(events: Sequence) -> list:
    from .values import to_json

    return [to_json(from_python(e)) for e in events]


def _source_of(program: S.Program) -> str:
    from .parser import pretty

    return program.source or pretty(program)


def build_trace(engine: Engine, w: World, events: Sequence, taken: list[int],
                seed: int | None = None):
    from .trace import ExecutionTrace, digest_of
    from .values import to_json

    engine.finish(w)
    visible = 0
    for s in w.rows:
        if s.visible:
            s.index = visible
            visible += 1
    return ExecutionTrace(
        program=_source_of(engine.program), name=engine.program.name,
        variant=engine.variant.value, events=_events_json(events),
        schedule={"choices": list(taken), "latencies": list(w.latencies)},
        steps=w.rows,
        responses=[{"event": e, "value": to_json(v)} for e, v in w.responses],
        db={k: to_json(v) for k, v in sorted(w.db.items())},
        promises=[w.promises[p].to_json() for p in sorted(w.promises)],
        effects=[list(e) for e in w.effects], diagnostics=list(w.diagnostics),
        broken=[list(b) for b in w.broken],
        status="stuck" if w.current is not None else "done",
        final_state=w.fn.to_json(), digest=digest_of(w.key(timing=True)), seed=seed,
    )


def run(program: S.Program, events: Sequence, variant: Variant | str, schedule,
        *, platform_controls_invalidate: bool = False):
    """Execute ``program`` on ``events`` and return its :class:`ExecutionTrace`.

    ``schedule`` is a :class:`Scripted` or :class:`Seeded` source (a bare list
    of ints is taken as a script).
    """
    if isinstance(schedule, (list, tuple)):
        schedule = Scripted(schedule)
    engine = Engine(program, variant, platform_controls_invalidate=platform_controls_invalidate)
    w = engine.initial(events)
    taken: list[int] = []
    drive(engine, w, schedule, taken)
    return build_trace(engine, w, events, taken, getattr(schedule, "seed", None))


def replay(trace):
    """Re-run ``trace`` from its recorded schedule; raise on any difference."""
    from .parser import parse_program
    from .values import from_json

    program = parse_program(trace.program, trace.name)
    events = [from_json(e) for e in trace.events]
    sched = Scripted(trace.schedule["choices"], trace.schedule["latencies"])
    try:
        again = run(program, events, trace.variant, sched)
    except (ScheduleExhausted, ScheduleError) as exc:
        raise ReplayDivergence(_first_difference(trace.steps, []), str(exc)) from exc
    again.seed = trace.seed
    if again.canonical() != trace.canonical():
        raise ReplayDivergence(_first_difference(trace.steps, again.steps))
    return again


def _first_difference(a: list, b: list) -> int:
    for i, (x, y) in enumerate(zip(a, b)):
        if x.to_json() != y.to_json():
            return i
    return min(len(a), len(b))


def symbolic_script(program: S.Program, events: Sequence, variant: Variant | str,
                    picks: Sequence) -> list[int]:
    """Translate readable picks into a choice-index script.

    Each pick is ``"step"``, ``"receive"``, ``"invalidate"`` or a promise site
    such as ``"p16"`` (resolve the oldest in-flight operation from that line).
    Picks are consumed only where the engine offers two or more choices.
    """
    engine = Engine(program, variant)
    w = engine.initial(events, record=False)
    engine.settle_down(w)
    out: list[int] = []
    picks = list(picks)
    while True:
        options = engine.choices(w)
        if not options:
            break
        if len(options) == 1:
            engine.apply(w, options[0])
            continue
        if not picks:
            raise ScheduleExhausted(f"picks ran out with options {options}")
        want = picks.pop(0)
        for i, c in enumerate(options):
            if c[0] == want or (c[0] == "resolve" and w.promises[c[1]].site == want):
                break
        else:
            raise ScheduleError(f"pick {want!r} not among {options}")
        out.append(i)
        engine.apply(w, options[i])
    if picks:
        raise ScheduleError(f"unused picks: {picks}")
    return out
