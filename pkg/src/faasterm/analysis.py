"""Promise graphs and violation detectors over execution traces.

Everything here reads a finished :class:`~faasterm.trace.ExecutionTrace`; no
engine state is consulted, so the detectors double as an independent check of
what the engine did.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .semantics import Variant

VERDICT_SCHEMA = 1

EDGE_FOR_CHAIN = {"then": "onFulfill", "catch": "onReject", "finally": "onFinally"}


class UnknownNode(KeyError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    site: str
    desc: str
    origin: int | None
    kind: str  # "init" | "io" | "reaction" | "combinator"
    pid: int | None = None
    line: int = 0

    @property
    def label(self) -> str:
        d = self.desc if self.desc.endswith(")") or " " in self.desc else f"{self.desc}()"
        return f"{self.site}: {d}"


@dataclass
class PromiseGraph:
    nodes: dict = field(default_factory=dict)  # id -> Node
    edges: set = field(default_factory=set)  # (src id, dst id, label)

    def successors(self, n: str) -> list[str]:
        return [b for a, b, _ in self.edges if a == n]

    def resolve(self, ref) -> set[str]:
        """Node ids for a pid, node id, site (``"p13"``) or site@event (``"p12@2"``)."""
        if isinstance(ref, int):
            ids = {n.id for n in self.nodes.values() if n.pid == ref}
        elif ref in self.nodes:
            ids = {ref}
        else:
            site, _, ev = str(ref).partition("@")
            ids = {n.id for n in self.nodes.values()
                   if n.site == site and (not ev or str(n.origin) == ev)}
        if not ids:
            raise UnknownNode(ref)
        return ids

    def is_acyclic(self) -> bool:
        indeg = {n: 0 for n in self.nodes}
        for _, b, _ in self.edges:
            indeg[b] += 1
        todo = deque(n for n, d in indeg.items() if d == 0)
        seen = 0
        while todo:
            n = todo.popleft()
            seen += 1
            for m in self.successors(n):
                indeg[m] -= 1
                if indeg[m] == 0:
                    todo.append(m)
        return seen == len(self.nodes)

    def sites(self) -> set[str]:
        return {n.site for n in self.nodes.values()}


def _init_id(eid) -> str:
    return f"init{eid}"


def build_graph(trace, elide: bool = False) -> PromiseGraph:
    """Promise graph of a run.

    With ``elide``, a handler's returned promise and the reaction adopting it
    are shown as one node (the operation's), matching the usual drawing.
    """
    g = PromiseGraph()
    events = sorted({s.event for s in trace.steps if s.kind == "receive"}) or [1]
    for e in events:
        g.nodes[_init_id(e)] = Node(_init_id(e), "p_init", "main", e, "init")
    recs = {p["id"]: p for p in trace.promises}
    nid = lambda pid: f"#{pid}"  # noqa: E731
    for pid, p in recs.items():
        desc = p["desc"]
        if p["kind"] == "reaction" and p["adopted"] is None and p["handler_op"]:
            desc = p["handler_op"]
        g.nodes[nid(pid)] = Node(nid(pid), p["site"], desc, p["origin"], p["kind"], pid, p["line"])
    for pid, p in recs.items():
        me = nid(pid)
        if p["kind"] == "io":
            if p["adopter"] is not None:
                r = recs[p["adopter"]]
                g.edges.add((nid(p["parents"][0]), me, EDGE_FOR_CHAIN[r["chain"]]))
                g.edges.add((me, nid(p["adopter"]), "adopt"))
            elif p["parents"]:
                g.edges.add((nid(p["parents"][0]), me, "fork"))
            else:
                g.edges.add((_init_id(p["origin"]), me, "fork"))
        elif p["kind"] == "reaction":
            g.edges.add((nid(p["parents"][0]), me, EDGE_FOR_CHAIN[p["chain"]]))
        elif p["kind"] == "combinator":
            for m in p["parents"]:
                g.edges.add((nid(m), me, "combinatorMember"))
    return _elided_copy(g) if elide else g


def has_path(g: PromiseGraph, a, b) -> bool:
    """Is there a causal path from ``a`` to ``b`` (reflexive)?"""
    src, dst = g.resolve(a), g.resolve(b)
    if src & dst:
        return True
    seen = set(src)
    todo = deque(src)
    while todo:
        n = todo.popleft()
        for m in g.successors(n):
            if m in dst:
                return True
            if m not in seen:
                seen.add(m)
                todo.append(m)
    return False


# -- DOT -------------------------------------------------------------------------


def export_dot(g: PromiseGraph, elide_intermediates: bool = True) -> str:
    """Render ``g`` as DOT with stable ordering.

    ``elide_intermediates`` applies only to graphs built without elision;
    pass the output of ``build_graph(trace)`` and choose here.
    """
    if elide_intermediates and any(lab == "adopt" for *_, lab in g.edges):
        g = _elided_copy(g)
    order = sorted(g.nodes.values(), key=lambda n: (n.kind != "init", n.line, n.origin or 0,
                                                     n.pid or 0))
    names = _display_names(order)
    out = ["digraph {"]
    for n in order:
        out.append(f'  "{names[n.id]}" [label="{n.label}"];')
    rank = {n.id: i for i, n in enumerate(order)}
    for a, b, lab in sorted(g.edges, key=lambda e: (rank[e[0]], rank[e[1]], e[2])):
        out.append(f'  "{names[a]}" -> "{names[b]}" [label="{lab}"];')
    out.append("}")
    return "\n".join(out) + "\n"


def _elided_copy(g: PromiseGraph) -> PromiseGraph:
    h = PromiseGraph(dict(g.nodes), set(g.edges))
    for o, r, lab in sorted(g.edges):
        if lab != "adopt":
            continue
        new = set()
        for a, b, l2 in h.edges:
            if (a, b, l2) == (o, r, lab):
                continue
            a2 = o if a == r else a
            b2 = o if b == r else b
            if a2 != b2:
                new.add((a2, b2, l2))
        h.edges = new
        h.nodes.pop(r, None)
    return h


def _display_names(order: list) -> dict:
    count: dict = {}
    for n in order:
        count[n.site] = count.get(n.site, 0) + 1
    names, used = {}, set()
    for n in order:
        name = n.site if count[n.site] == 1 else f"{n.site}_e{n.origin}"
        if name in used:
            name = f"{name}_{n.pid}"
        used.add(name)
        names[n.id] = name
    return names


# -- detectors -------------------------------------------------------------------


@dataclass
class Verdict:
    broken_promises: list = field(default_factory=list)  # [(pid, site)]
    residual: list = field(default_factory=list)  # [(pid, site)]
    interference: list = field(default_factory=list)  # [(pid, site, origin, during)]
    stale_writes: list = field(default_factory=list)  # [(key, value, events)]
    races: list = field(default_factory=list)  # [(effect site, marker site, reason)]
    info: list = field(default_factory=list)  # races that did not manifest
    diagnostics: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.broken_promises or self.interference or self.stale_writes or self.races)

    def to_json(self) -> dict:
        return {
            "schema": VERDICT_SCHEMA,
            "broken_promises": [list(x) for x in self.broken_promises],
            "residual": [list(x) for x in self.residual],
            "interference": [list(x) for x in self.interference],
            "stale_writes": [[k, v, list(ev)] for k, v, ev in self.stale_writes],
            "races": [list(x) for x in self.races],
            "info": [list(x) for x in self.info],
            "diagnostics": list(self.diagnostics),
        }

    def lines(self) -> list[str]:
        out = []
        for pid, site in self.broken_promises:
            out.append(f"broken promise {site} (#{pid})")
        for pid, site, origin, during in self.interference:
            out.append(f"interference: {site} from event {origin} resolved during event {during}")
        for key, value, events in self.stale_writes:
            out.append(f"stale write: {key} <- {value} (events {', '.join(map(str, events))})")
        for a, b, why in self.races:
            out.append(f"race: {a} vs {b}: {why}")
        for a, b, why in self.info:
            out.append(f"info: {a} vs {b}: {why}")
        out.extend(f"diagnostic: {d}" for d in self.diagnostics)
        return out or ["clean"]


def detect(trace, variant: Variant | str | None = None, *, live: bool = False) -> Verdict:
    """Run every detector over ``trace``.

    ``live`` treats the last instance as still running: its pending promises are
    reported as residual but not as broken.
    """
    variant = Variant.parse(variant or trace.variant)
    v = Verdict()
    sites = {p["id"]: p["site"] for p in trace.promises}
    steps = trace.steps

    # broken promises: residual of every instance that stopped running
    last_of: dict = {}
    for i, s in enumerate(steps):
        last_of[s.instance] = i
    final_instance = max(last_of) if last_of else 1
    for inst, i in sorted(last_of.items()):
        s = steps[i]
        stopped = inst != final_instance or not isinstance(s.event, int)
        if inst == final_instance:
            v.residual = [(p, sites[p]) for p in s.pending]
            if live:
                stopped = False
        if stopped:
            v.broken_promises.extend((p, sites[p]) for p in s.pending)

    for s in steps:
        if s.kind != "resolve" or s.action is None or s.action["action"] != "Resolve":
            continue
        if s.origin is not None and s.origin != s.event:
            v.interference.append((s.pid, sites[s.pid], s.origin, s.event))
        if "key" in s.data and any(e != s.data["during"] for e in s.data["provenance"]):
            v.stale_writes.append((s.data["key"], s.data["value"], tuple(s.data["provenance"])))

    _races(trace, variant, v)
    v.diagnostics = list(trace.diagnostics) + _unhandled(trace)
    return v


def _unhandled(trace) -> list[str]:
    awaited = {s.data.get("promise") for s in trace.steps if s.kind == "respond"}
    out = []
    for p in trace.promises:
        if (p["state"] == "rejected" and not p["reactions"] and not p["dependents"]
                and p["adopter"] is None and p["id"] not in awaited):
            out.append(f"unhandled rejection of {p['site']} (#{p['id']})")
    return out


def _effectful(g: PromiseGraph, recs: dict) -> set[str]:
    writes = {f"#{pid}" for pid, p in recs.items()
              if p["desc"] == "con.write" and p["kind"] == "io"
              or (p["kind"] == "reaction" and p["adopted"] is None and p["handler_op"] == "con.write")}
    out = set(writes)
    for pid, p in recs.items():
        n = f"#{pid}"
        if p["kind"] == "io" and p["desc"] == "db.connect" and any(has_path(g, n, w) for w in writes):
            out.add(n)
    return out


def _races(trace, variant: Variant, v: Verdict) -> None:
    g = build_graph(trace)
    recs = {p["id"]: p for p in trace.promises}
    effectful = _effectful(g, recs)
    settled_at: dict = {}
    for i, s in enumerate(trace.steps):
        if s.kind in ("resolve", "settle", "passthrough", "adopt") and s.pid is not None:
            settled_at.setdefault(s.pid, i)
    for pid, p in recs.items():
        if p["state"] != "pending" and pid not in settled_at:
            settled_at[pid] = -1
    markers = []  # (step index, marker node id, event, counts as termination)
    for i, s in enumerate(trace.steps):
        if s.kind == "respond":
            e = s.data["event"]
            node = f"#{s.data['promise']}" if s.data.get("promise") else _init_id(e)
            markers.append((i, node, e, variant.coupled))
        elif s.kind == "end":
            e = s.data["event"]
            node = f"#{s.data['promise']}" if s.data.get("promise") else _init_id(e)
            markers.append((i, node, e, True))
    for i, marker, e, terminal in markers:
        if marker not in g.nodes:
            continue
        for n in sorted(effectful, key=lambda x: int(x[1:])):
            node = g.nodes[n]
            if node.origin != e or has_path(g, n, marker):
                continue
            entry = (node.site, g.nodes[marker].site, "no causal path")
            at = settled_at.get(node.pid)
            unsettled = at is None or at > i
            if terminal and unsettled:
                if entry not in v.races:
                    v.races.append(entry)
            elif entry not in v.info and entry not in v.races:
                v.info.append(entry)
