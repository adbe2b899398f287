"""Execution traces: rows in the ``# | loc | command | state | unresolved | comment``
layout, plus everything needed to replay and analyse a run."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

SCHEMA_VERSION = 1


@dataclass
class Step:
    """One row of an execution trace.

    Hidden rows (``visible=False``) record bookkeeping such as handler
    registration; the rendered table shows visible rows only.
    """

    kind: str
    loc: str
    command: str
    comment: str = ""
    visible: bool = True
    state: tuple = ()  # ((name, rendered value), ...) when memory changed
    unresolved: tuple = ()  # ((site, desc), ...)
    pending: tuple = ()  # pids with I/O still running after the step
    event: int | str = "f"  # event in progress after the step ("f"/"d" otherwise)
    instance: int = 1
    pid: int | None = None
    origin: int | None = None
    action: dict | None = None
    data: dict = field(default_factory=dict)
    index: int | None = None  # position among visible rows

    def to_json(self) -> dict:
        return {
            "kind": self.kind, "loc": self.loc, "command": self.command, "comment": self.comment,
            "visible": self.visible, "state": [list(x) for x in self.state],
            "unresolved": [list(x) for x in self.unresolved], "pending": list(self.pending),
            "event": self.event, "instance": self.instance, "pid": self.pid, "origin": self.origin,
            "action": self.action, "data": self.data, "index": self.index,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Step":
        d = dict(d)
        d["state"] = tuple(tuple(x) for x in d["state"])
        d["unresolved"] = tuple(tuple(x) for x in d["unresolved"])
        d["pending"] = tuple(d["pending"])
        return cls(**d)


@dataclass
class ExecutionTrace:
    program: str  # DSL source the run was produced from
    name: str
    variant: str
    events: list  # JSON payloads in arrival order
    schedule: dict  # {"choices": [...], "latencies": [...]}
    steps: list
    responses: list = field(default_factory=list)  # [{"event": eid, "value": json}]
    db: dict = field(default_factory=dict)
    promises: list = field(default_factory=list)  # final promise records, JSON form
    effects: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    broken: list = field(default_factory=list)  # [[instance, pid], ...] as stopped by the engine
    status: str = "done"
    final_state: dict = field(default_factory=dict)
    digest: str = ""
    seed: int | None = None

    @property
    def rows(self) -> list:
        return [s for s in self.steps if s.visible]

    def promise(self, pid: int) -> dict:
        for p in self.promises:
            if p["id"] == pid:
                return p
        raise KeyError(pid)

    def unresolved_column(self) -> list[set]:
        return [{site for site, _ in r.unresolved} for r in self.rows]

    # -- serialisation

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION, "program": self.program, "name": self.name,
            "variant": self.variant, "events": self.events, "schedule": self.schedule,
            "steps": [s.to_json() for s in self.steps], "responses": self.responses,
            "db": self.db, "promises": self.promises, "effects": self.effects,
            "diagnostics": self.diagnostics, "broken": self.broken, "status": self.status,
            "final_state": self.final_state, "digest": self.digest, "seed": self.seed,
        }

    def canonical(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, d: dict) -> "ExecutionTrace":
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema {d.get('schema')!r}")
        d = dict(d)
        d.pop("schema")
        d["steps"] = [Step.from_json(s) for s in d["steps"]]
        return cls(**d)

    @classmethod
    def loads(cls, text: str) -> "ExecutionTrace":
        return cls.from_json(json.loads(text))

    # -- rendering

    def table(self) -> str:
        return render_table(self.rows)


def digest_of(obj) -> str:
    return hashlib.sha256(repr(obj).encode()).hexdigest()[:16]


def format_unresolved(unresolved) -> str:
    return "{" + ", ".join(f"{site} ({desc})" for site, desc in unresolved) + "}"


def render_table(rows: list) -> str:
    header = ("#", "loc", "command", "state", "unresolved promises", "comment")
    cells = []
    for i, r in enumerate(rows):
        state = [f"{k} -> {v}" for k, v in r.state] or [""]
        cells.append([[str(i)], [r.loc], [r.command], state, [format_unresolved(r.unresolved)],
                      [r.comment]])
    widths = [len(h) for h in header]
    for row in cells:
        for j, col in enumerate(row):
            widths[j] = max(widths[j], *(len(x) for x in col))
    line = lambda parts: " | ".join(p.ljust(widths[j]) for j, p in enumerate(parts)).rstrip()  # noqa: E731
    rule = "-+-".join("-" * w for w in widths)
    out = [line(header), rule]
    for row in cells:
        height = max(len(c) for c in row)
        for k in range(height):
            out.append(line([c[k] if k < len(c) else "" for c in row]))
    return "\n".join(out) + "\n"
