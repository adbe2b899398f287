"""Platform-side simulation: a pool of container instances behind an invoker.

The invoker talks to each instance over an ordered duplex channel with three
blocking calls: ``init``, ``run`` and (decoupled variant only) ``await``.
Every call is logged as a request/response message pair. The caller of an
event gets exactly one message, the response to ``run``.

Time is measured in engine ticks. Each instance keeps its own virtual clock;
the pool clock only advances with billed work and explicit idle time
(:meth:`Pool.idle`), so idle periods are never billed.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

from . import syntax as S
from .analysis import Verdict, detect
from .engine import Engine, Scripted, Seeded, World, build_trace, suspend_resume
from .semantics import DONE, Variant
from .values import ErrorVal, Value, display, from_python


class LifecycleError(RuntimeError):
    pass


@dataclass
class InvokerConfig:
    cold_start_ticks: int = 25  # await-call overhead on a fresh instance
    warm_await_overhead: int = 8  # await-call overhead on a reused instance
    timeout_ticks: int = 1000
    idle_reclaim_ticks: int = 100
    pool_size: int = 4

    @classmethod
    def parse(cls, text: str) -> "InvokerConfig":
        """Read a JSON object or ``key=value`` lines (``#`` starts a comment)."""
        text = text.strip()
        if text.startswith("{"):
            raw = json.loads(text)
        else:
            raw = {}
            for n, line in enumerate(text.splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, val = line.partition("=")
                if not sep:
                    raise ValueError(f"line {n}: expected key=value")
                raw[key.strip()] = val.strip()
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown invoker settings: {', '.join(sorted(unknown))}")
        cfg = cls(**{k: int(v) for k, v in raw.items()})
        for f in fields(cfg):
            if getattr(cfg, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if cfg.pool_size < 1:
            raise ValueError("pool_size must be at least 1")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "InvokerConfig":
        return cls.parse(Path(path).read_text())


class Lifecycle(enum.Enum):
    UNINITIALIZED = "uninitialized"
    INITIALIZED = "initialized"
    RUNNING = "running"
    AWAITING = "awaiting"
    STOPPED = "stopped"


_MOVES = {
    Lifecycle.UNINITIALIZED: {Lifecycle.INITIALIZED, Lifecycle.STOPPED},
    # coupled variants skip the await phase
    Lifecycle.INITIALIZED: {Lifecycle.RUNNING, Lifecycle.STOPPED},
    Lifecycle.RUNNING: {Lifecycle.AWAITING, Lifecycle.INITIALIZED, Lifecycle.STOPPED},
    Lifecycle.AWAITING: {Lifecycle.INITIALIZED, Lifecycle.STOPPED},
    Lifecycle.STOPPED: set(),
}


@dataclass(frozen=True)
class Message:
    seq: int
    direction: str  # "request" | "response"
    call: str  # "init" | "run" | "await"
    instance: int
    activation: int | None = None
    body: str = ""


@dataclass
class Channel:
    """Ordered log of invoker/instance traffic."""

    messages: list = field(default_factory=list)

    def send(self, direction: str, call: str, instance: int, activation=None, body="") -> Message:
        m = Message(len(self.messages), direction, call, instance, activation, body)
        self.messages.append(m)
        return m

    def calls(self, instance: int | None = None) -> list[str]:
        return [m.call for m in self.messages
                if m.direction == "request" and (instance is None or m.instance == instance)]


@dataclass
class BillingRecord:
    activation: int
    instance: int
    cold: bool
    run_ticks: int = 0
    await_ticks: int = 0
    timed_out: str | None = None  # None | "run" | "await"

    @property
    def total(self) -> int:
        return self.run_ticks + self.await_ticks


@dataclass(frozen=True)
class CallerMessage:
    activation: int
    value: Value
    error: bool = False

    def __str__(self) -> str:
        return f"#{self.activation} {'error' if self.error else 'ok'}: {display(self.value)}"


@dataclass(frozen=True)
class AwaitNotice:
    activation: int
    steps: int  # engine choices taken while awaiting
    ticks: int
    timed_out: bool = False


@dataclass
class ContainerInstance:
    id: int
    program: S.Program
    engine: Engine
    world: World
    lifecycle: Lifecycle = Lifecycle.UNINITIALIZED
    warm: bool = False  # has processed an event before
    eid: int | None = None  # engine event id while running/awaiting
    activation: int | None = None
    idle_since: int = 0
    last_used: int = 0
    payloads: list = field(default_factory=list)
    verdict: Verdict | None = None

    def move(self, to: Lifecycle) -> None:
        if to not in _MOVES[self.lifecycle]:
            raise LifecycleError(f"instance {self.id}: {self.lifecycle.value} -> {to.value}")
        self.lifecycle = to

    def trace(self):
        """Execution trace of everything this instance has run so far."""
        w = self.world.clone()
        return build_trace(self.engine, w, self.payloads, [])

    def analyse(self) -> Verdict:
        stopped = self.lifecycle is Lifecycle.STOPPED
        v = detect(self.trace(), self.engine.variant, live=not stopped)
        if stopped:
            known = set(v.broken_promises)
            v.broken_promises.extend(x for x in v.residual if x not in known)
        self.verdict = v
        return v


@dataclass
class DispatchResult:
    response: CallerMessage
    billing: BillingRecord
    verdict: Verdict
    instance: int
    awaited: AwaitNotice | None = None  # decoupled variant only


class Pool:
    """Container instances for one program under one variant."""

    def __init__(self, program: S.Program, variant: Variant | str,
                 config: InvokerConfig | None = None, schedule=None):
        self.program = program
        self.variant = Variant.parse(variant)
        self.config = config or InvokerConfig()
        self.schedule = schedule if schedule is not None else Seeded(0)
        self.instances: list[ContainerInstance] = []
        self.channel = Channel()
        self.caller: list[CallerMessage] = []
        self.billing: list[BillingRecord] = []
        self.log: list[str] = []  # post-response errors, never sent to the caller
        self.clock = 0
        self.next_activation = 1

    def idle(self, ticks: int) -> None:
        """Let wall time pass with no event in flight."""
        if ticks < 0:
            raise ValueError("ticks must be non-negative")
        self.clock += ticks

    def warm_instances(self) -> list[ContainerInstance]:
        return [i for i in self.instances if i.lifecycle is Lifecycle.INITIALIZED]

    def live(self) -> list[ContainerInstance]:
        return [i for i in self.instances if i.lifecycle is not Lifecycle.STOPPED]

    # -- instance management

    def _acquire(self) -> ContainerInstance:
        warm = sorted(self.warm_instances(), key=lambda i: i.last_used, reverse=True)
        if warm:
            inst = warm[0]
            gap = self.clock - inst.idle_since
            if gap:
                inst.world = suspend_resume(inst.world, gap)
            return inst
        live = self.live()
        if len(live) >= self.config.pool_size:
            victim = min(live, key=lambda i: i.last_used)
            self._stop(victim, "evicted to make room")
        engine = Engine(self.program, self.variant, platform_controls_invalidate=True)
        inst = ContainerInstance(len(self.instances) + 1, self.program, engine,
                                 engine.initial([]))
        self.instances.append(inst)
        self.channel.send("request", "init", inst.id)
        inst.move(Lifecycle.INITIALIZED)
        self.channel.send("response", "init", inst.id)
        return inst

    def _stop(self, inst: ContainerInstance, why: str) -> None:
        w = inst.world
        if inst.lifecycle is Lifecycle.INITIALIZED and w.fn.event != DONE and \
                self.variant is not Variant.SINGLE:
            inst.engine._invalidate(w)
        inst.move(Lifecycle.STOPPED)
        inst.analyse()
        if inst.verdict.broken_promises:
            sites = ", ".join(s for _, s in inst.verdict.broken_promises)
            self.log.append(f"instance {inst.id} stopped ({why}); broken promises: {sites}")
        else:
            self.log.append(f"instance {inst.id} stopped ({why})")

    # -- phases

    def _advance(self, inst: ContainerInstance, done: Callable[[World], bool],
                 deadline: int) -> tuple[int, bool]:
        """Step ``inst`` until ``done``; returns (steps taken, timed out)."""
        eng, w = inst.engine, inst.world
        eng.latency_for = self.schedule.latency
        steps = 0
        while not done(w):
            options = eng.choices(w)
            if not options:
                # nothing can happen any more; the platform waits out the budget
                w.clock = max(w.clock, deadline + 1)
                return steps, True
            i = 0 if len(options) == 1 else self.schedule.choose(w, options)
            nxt = w.clone()
            eng.apply(nxt, options[i])
            if nxt.clock > deadline:
                w.clock = deadline + 1
                return steps, True
            inst.world = w = nxt
            steps += 1
        return steps, False

    def dispatch(self, event) -> DispatchResult:
        """Deliver one event: init if needed, run, then await under the decoupled variant."""
        payload = from_python(event)
        act = self.next_activation
        self.next_activation += 1
        inst = self._acquire()
        cold = not inst.warm
        bill = BillingRecord(act, inst.id, cold)
        inst.activation = act
        eng = inst.engine

        self.channel.send("request", "run", inst.id, act, display(payload))
        inst.move(Lifecycle.RUNNING)
        eng.push_event(inst.world, payload)
        inst.payloads.append(payload)
        eng.settle_down(inst.world)
        start = inst.world.clock
        budget = self.config.timeout_ticks
        eid = inst.world.next_eid

        def responded(w: World) -> bool:
            info = w.events.get(eid)
            return info is not None and info.responded

        _, late = self._advance(inst, responded, start + budget)
        w = inst.world
        inst.eid = eid
        bill.run_ticks = min(w.clock, start + budget + 1) - start
        if late:
            bill.timed_out = "run"
            reply = CallerMessage(act, ErrorVal("timeout"), error=True)
        else:
            reply = CallerMessage(act, dict(w.responses)[eid])
        self.channel.send("response", "run", inst.id, act, str(reply))
        self.caller.append(reply)

        notice = None
        if late:
            self._stop(inst, f"timeout during run of #{act}")
        elif not self.variant.coupled:
            inst.move(Lifecycle.AWAITING)
            notice = self.await_phase(inst, budget - bill.run_ticks)
            bill.await_ticks = notice.ticks
            if notice.timed_out:
                bill.timed_out = "await"
        else:
            self._release(inst)
        self.billing.append(bill)
        self.clock += bill.total
        inst.last_used = inst.idle_since = self.clock
        inst.warm = True
        verdict = inst.verdict if inst.lifecycle is Lifecycle.STOPPED else inst.analyse()
        return DispatchResult(reply, bill, verdict, inst.id, notice)

    def await_phase(self, inst: ContainerInstance, budget_left: int | None = None) -> AwaitNotice:
        """Block until the running event calls ``end()``.

        Returns at once when it already has. A timeout here is only logged:
        the caller already holds its response.
        """
        if inst.lifecycle is not Lifecycle.AWAITING:
            raise LifecycleError(f"instance {inst.id} is {inst.lifecycle.value}, not awaiting")
        act, eid = inst.activation, inst.eid
        if budget_left is None:
            budget_left = self.config.timeout_ticks
        overhead = self.config.warm_await_overhead if inst.warm else self.config.cold_start_ticks
        self.channel.send("request", "await", inst.id, act)
        start = inst.world.clock
        deadline = start + max(budget_left - overhead, -1)
        steps, late = self._advance(inst, lambda w: w.events[eid].ended, deadline)
        ticks = min(inst.world.clock, deadline + 1) - start + overhead
        if late:
            self.log.append(f"activation #{act}: timeout while awaiting end()")
            self.channel.send("response", "await", inst.id, act, "timeout")
            self._stop(inst, f"timeout while awaiting #{act}")
        else:
            self.channel.send("response", "await", inst.id, act, "ended")
            self._release(inst)
        return AwaitNotice(act, steps, ticks, late)

    def _release(self, inst: ContainerInstance) -> None:
        if inst.world.fn.event == DONE:
            # single execution: the environment cannot take another event
            inst.move(Lifecycle.INITIALIZED)
            self._stop(inst, "single execution")
        else:
            inst.move(Lifecycle.INITIALIZED)

    def reclaim(self, idle_ticks: int | None = None) -> list[ContainerInstance]:
        """Stop initialized instances idle for at least ``idle_ticks``."""
        limit = self.config.idle_reclaim_ticks if idle_ticks is None else idle_ticks
        out = []
        for inst in self.warm_instances():
            if self.clock - inst.idle_since >= limit:
                self._stop(inst, "reclaimed")
                out.append(inst)
        return out


@dataclass(frozen=True)
class ReclaimPolicy:
    idle_ticks: int


def dispatch(pool: Pool, event) -> DispatchResult:
    return pool.dispatch(event)


def await_phase(pool: Pool, instance: ContainerInstance) -> AwaitNotice:
    return pool.await_phase(instance)


def reclaim(pool: Pool, policy: ReclaimPolicy | None = None) -> Pool:
    pool.reclaim(None if policy is None else policy.idle_ticks)
    return pool


# -- exhaustive driving ------------------------------------------------------------


class _Odometer:
    """Schedule source that walks every choice sequence, one run at a time."""

    def __init__(self):
        self.prefix: list[int] = []
        self.arity: list[int] = []
        self.cursor = 0

    def latency(self, op: S.AsyncOp, index: int) -> int:
        return S.op_latency(op).lo

    def choose(self, w: World, options: list) -> int:
        if self.cursor < len(self.prefix):
            i = self.prefix[self.cursor]
        else:
            i = 0
            self.prefix.append(0)
            self.arity.append(len(options))
        self.cursor += 1
        return i

    def advance(self) -> bool:
        """Move to the next unexplored sequence; False when all are done."""
        del self.prefix[self.cursor:], self.arity[self.cursor:]
        while self.prefix:
            self.prefix[-1] += 1
            if self.prefix[-1] < self.arity[-1]:
                self.cursor = 0
                return True
            self.prefix.pop()
            self.arity.pop()
        return False


def every_schedule(program: S.Program, events: Sequence, variant: Variant | str,
                   config: InvokerConfig | None = None, *, limit: int = 100_000,
                   between: Callable[[Pool], None] | None = None):
    """Yield one finished :class:`Pool` per distinct engine schedule.

    ``between(pool)`` runs after each dispatch, e.g. to let idle time pass.
    """
    odo = _Odometer()
    for _ in range(limit):
        pool = Pool(program, variant, config, schedule=odo)
        for e in events:
            pool.dispatch(e)
            if between is not None:
                between(pool)
        yield pool
        if not odo.advance():
            return
    raise RuntimeError(f"more than {limit} schedules")


__all__ = [
    "AwaitNotice", "BillingRecord", "CallerMessage", "Channel", "ContainerInstance",
    "DispatchResult", "InvokerConfig", "Lifecycle", "LifecycleError", "Message", "Pool",
    "ReclaimPolicy", "Scripted", "Seeded", "await_phase", "dispatch",
    "every_schedule", "reclaim",
]
