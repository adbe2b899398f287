"""Command-line front end.

Exit codes: 0 clean, 2 violations found, 1 bad input or usage,
3 exploration hit its state bound.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from . import data_text
from .analysis import Verdict, build_graph, detect, export_dot
from .engine import (
    Engine, ScheduleError, ScheduleExhausted, Scripted, Seeded, drive, run,
)
from .explore import StateSpaceExceeded, explore
from .invoker import InvokerConfig, Pool
from .parser import ParseError, parse_program
from .semantics import Variant
from .trace import ExecutionTrace
from .validate import errors, validate
from .values import display

OK, USAGE, VIOLATIONS, INCOMPLETE = 0, 1, 2, 3

VARIANTS = [v.value for v in Variant]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse's own exit status 2 would read as "violations found"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE, f"{self.prog}: error: {message}\n")


def exit_code(verdicts: Sequence[Verdict]) -> int:
    return OK if all(v.empty for v in verdicts) else VIOLATIONS


# -- inputs ---------------------------------------------------------------------


def _read(path: str) -> tuple[str, str]:
    """Text of ``path``, falling back to the shipped data files."""
    p = Path(path)
    if p.exists():
        return p.read_text(), p.stem
    for name in (p.name, p.name + ".tl"):
        try:
            return data_text(name), p.stem
        except FileNotFoundError:
            pass
    raise UsageError(f"no such file: {path}")


def load_program(path: str, variant: Variant | None = None):
    text, name = _read(path)
    try:
        program = parse_program(text, name)
    except ParseError as exc:
        raise UsageError(f"{path}: {exc}") from None
    bad = errors(validate(program, variant))
    if bad:
        raise UsageError("\n".join(f"{path}: {d}" for d in bad))
    return program


def default_events(variant: Variant) -> list:
    # reuse only shows anything with a second event on the same instance
    if variant is Variant.REUSE:
        return [{"val": 42}, {"val": 112}]
    return [{"val": 42}]


def parse_events(text: str | None, variant: Variant) -> list:
    if text is None:
        return default_events(variant)
    try:
        events = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--events is not JSON: {exc}") from None
    if not isinstance(events, list):
        raise UsageError("--events must be a JSON list")
    return events


def load_script(path: str) -> Scripted:
    text, _ = _read(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not JSON: {exc}") from None
    if isinstance(data, dict):  # a saved trace schedule
        return Scripted(data.get("choices", []), data.get("latencies"))
    if not isinstance(data, list) or not all(isinstance(i, int) for i in data):
        raise UsageError(f"{path}: expected a JSON list of integers")
    return Scripted(data)


def _schedule(args):
    if args.script:
        return load_script(args.script)
    return Seeded(args.seed)


# -- commands -------------------------------------------------------------------


def _summary_lines(trace: ExecutionTrace, verdict: Verdict, verbose: bool) -> list[str]:
    from .values import from_json

    out = [f"program: {trace.name}   variant: {trace.variant}   status: {trace.status}"]
    for r in trace.responses:
        out.append(f"response to event {r['event']}: {display(from_json(r['value']))}")
    db = ", ".join(f"{k} = {display(from_json(v))}" for k, v in trace.db.items()) or "(empty)"
    out.append(f"db: {db}")
    out.extend(f"verdict: {line}" for line in verdict.lines())
    if verbose:
        out.append(f"schedule: {json.dumps(trace.schedule['choices'])}")
        out.append(f"digest: {trace.digest}")
    return out


def cmd_run(args) -> int:
    variant = Variant.parse(args.variant)
    program = load_program(args.program, variant)
    events = parse_events(args.events, variant)
    if args.invoker:
        return _run_invoker(args, program, variant, events)
    trace = run(program, events, variant, _schedule(args))
    verdict = detect(trace, variant)
    if args.save:
        Path(args.save).write_text(trace.canonical() + "\n")
    if args.format == "json":
        doc = trace.to_json()
        doc["verdict"] = verdict.to_json()
        print(json.dumps(doc, indent=2, sort_keys=True))
    elif args.format == "dot":
        print(export_dot(build_graph(trace)), end="")
    else:
        print("\n".join(_summary_lines(trace, verdict, args.verbose)))
        print()
        print(trace.table())
    return exit_code([verdict])


def _run_invoker(args, program, variant, events) -> int:
    cfg = InvokerConfig.load(args.invoker) if args.invoker != "default" else InvokerConfig()
    pool = Pool(program, variant, cfg, schedule=_schedule(args))
    results = [pool.dispatch(e) for e in events]
    if args.format == "json":
        doc = {
            "config": vars(cfg),
            "caller": [{"activation": m.activation, "value": display(m.value), "error": m.error}
                       for m in pool.caller],
            "billing": [dict(vars(b), total=b.total) for b in pool.billing],
            "channel": [vars(m) for m in pool.channel.messages],
            "log": pool.log,
            "verdicts": [r.verdict.to_json() for r in results],
        }
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        for m in pool.caller:
            print(f"caller <- {m}")
        for b in pool.billing:
            start = "cold" if b.cold else "warm"
            late = f", timeout during {b.timed_out}" if b.timed_out else ""
            print(f"billing #{b.activation} (instance {b.instance}, {start}): run {b.run_ticks} "
                  f"+ await {b.await_ticks} = {b.total} ticks{late}")
        for line in pool.log:
            print(f"log: {line}")
        for r in results:
            for line in r.verdict.lines():
                print(f"verdict #{r.response.activation}: {line}")
    return exit_code([r.verdict for r in results])


def cmd_explore(args) -> int:
    variant = Variant.parse(args.variant)
    program = load_program(args.program, variant)
    events = parse_events(args.events, variant)
    code = None
    try:
        report = explore(program, events, variant, max_states=args.max_states)
    except StateSpaceExceeded as exc:
        report, code = exc.partial, INCOMPLETE
        print(f"exploration incomplete: {exc}", file=sys.stderr)
    if args.witness_dir:
        out = Path(args.witness_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, oc in enumerate(report.outcomes, 1):
            (out / f"outcome{i}.sched").write_text(json.dumps(oc.witness) + "\n")
    if args.format == "json":
        print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    else:
        print(f"program: {report.program}   variant: {report.variant}   "
              f"states: {report.states}   schedules: {report.total_paths}   "
              f"outcomes: {len(report.outcomes)}")
        for i, oc in enumerate(report.outcomes, 1):
            s = oc.summary
            print(f"\noutcome {i}: {oc.paths} schedule(s), witness {json.dumps(oc.witness)}")
            db = ", ".join(f"{k} = {v}" for k, v in s.get("db", {}).items()) or "(empty)"
            print(f"  db: {db}")
            for e, v in s.get("responses", {}).items():
                print(f"  response to event {e}: {v}")
            if s.get("residual"):
                print(f"  residual: {', '.join(s['residual'])}")
            if s.get("effects"):
                print(f"  effects: {' ; '.join(s['effects'])}")
            if oc.verdict is not None:
                for line in oc.verdict.lines():
                    print(f"  {line}")
    if code is not None:
        return code
    return exit_code([oc.verdict for oc in report.outcomes if oc.verdict is not None])


def cmd_graph(args) -> int:
    variant = Variant.parse(args.variant)
    program = load_program(args.program, variant)
    events = parse_events(args.events, variant)
    trace = run(program, events, variant, _schedule(args))
    print(export_dot(build_graph(trace), elide_intermediates=not args.no_elide), end="")
    return exit_code([detect(trace, variant)])


def cmd_report(args) -> int:
    text, _ = _read(args.trace)
    try:
        trace = ExecutionTrace.loads(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{args.trace}: not a trace: {exc}") from None
    verdict = detect(trace)
    if args.format == "json":
        print(json.dumps(verdict.to_json(), indent=2, sort_keys=True))
    else:
        print("\n".join(_summary_lines(trace, verdict, args.verbose)))
    return exit_code([verdict])


# -- demo -----------------------------------------------------------------------

DEMO_EVENTS = [{"val": 42}, {"val": 112}]
DEMO_SEEDS = range(50)
_COLUMNS = [
    ("broken", "broken promises", lambda v: v.broken_promises),
    ("interference", "cross-event interference", lambda v: v.interference),
    ("stale", "stale writes", lambda v: v.stale_writes),
    ("race", "response races", lambda v: v.races),
]


def demo_program(variant: Variant):
    name = "running_example_end.tl" if variant is Variant.DECOUPLED else "running_example.tl"
    return name, parse_program(data_text(name), name[:-3])


def _response_delay(program, variant: Variant) -> float:
    """Mean ticks from receiving an event to answering it, over seeded runs."""
    total = count = 0
    for seed in DEMO_SEEDS:
        engine = Engine(program, variant)
        w = engine.initial(DEMO_EVENTS, record=False)
        drive(engine, w, Seeded(seed, invalidate_prob=0.0))
        for info in w.events.values():
            if info.responded_at is not None:
                total += info.responded_at - info.received_at
                count += 1
    return round(total / count, 2) if count else 0.0


def demo_matrix() -> list[dict]:
    rows = []
    for variant in Variant:
        name, program = demo_program(variant)
        report = explore(program, DEMO_EVENTS, variant)
        row = {"variant": variant.value, "program": name, "outcomes": len(report.outcomes)}
        for key, _, pick in _COLUMNS:
            row[key] = sum(1 for oc in report.outcomes if pick(oc.verdict))
        row["clean"] = all(oc.verdict.empty for oc in report.outcomes)
        row["response_delay"] = _response_delay(program, variant)
        rows.append(row)
    base = rows[0]["response_delay"]
    for row in rows:
        notes = []
        if row["variant"] == Variant.WAIT_ALL.value and row["response_delay"] > base:
            notes.append(f"response waits for all I/O: {row['response_delay']} vs "
                         f"{base} ticks")
        if row["clean"]:
            notes.append("all clear")
        row["note"] = "; ".join(notes)
    return rows


def render_matrix(rows: list[dict]) -> str:
    head = ["variant", "outcomes"] + [c[1] for c in _COLUMNS] + ["response delay", "note"]
    table = []
    for r in rows:
        cells = [r["variant"], str(r["outcomes"])]
        for key, _, _ in _COLUMNS:
            n = r[key]
            cells.append(f"✗ {n}/{r['outcomes']}" if n else "✓")
        cells += [f"{r['response_delay']:.2f}", r["note"]]
        table.append(cells)
    widths = [max(len(x[i]) for x in [head] + table) for i in range(len(head))]
    fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    lines = [fmt(head), fmt(["-" * w for w in widths])] + [fmt(c) for c in table]
    events = ", ".join(str(e["val"]) for e in DEMO_EVENTS)
    lines.append("")
    lines.append(f"events: {events}; counts are outcome classes over every schedule; "
                 f"response delay is the mean over {len(DEMO_SEEDS)} seeded runs")
    return "\n".join(lines)


def cmd_demo(args) -> int:
    rows = demo_matrix()
    if args.format == "json":
        print(json.dumps({"events": DEMO_EVENTS, "matrix": rows}, indent=2, sort_keys=True))
    else:
        print(render_matrix(rows))
    return OK


# -- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="faasterm", description="Serverless termination semantics laboratory.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def program_args(p, formats):
        p.add_argument("program", help="DSL file (shipped programs may be named directly)")
        p.add_argument("--variant", required=True, choices=VARIANTS)
        p.add_argument("--events", help='JSON list of event payloads, e.g. \'[{"val": 42}]\'')
        p.add_argument("--format", choices=formats, default=formats[0])
        p.add_argument("-v", "--verbose", action="store_true")

    def schedule_args(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--seed", type=int, default=0, help="seeded schedule (default 0)")
        g.add_argument("--script", help="JSON list of choice indices")

    p = sub.add_parser("run", help="execute one schedule and print its trace")
    program_args(p, ["table", "json", "dot"])
    schedule_args(p)
    p.add_argument("--invoker", metavar="CONFIG",
                   help="dispatch through the invoker simulation ('default' for built-in settings)")
    p.add_argument("--save", metavar="FILE", help="also write the trace as JSON")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("explore", help="enumerate every schedule's outcome")
    program_args(p, ["table", "json"])
    p.add_argument("--max-states", type=int, default=100_000)
    p.add_argument("--witness-dir", metavar="DIR", help="write one replayable script per outcome")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("graph", help="print the promise graph of one run as DOT")
    program_args(p, ["dot"])
    schedule_args(p)
    p.add_argument("--no-elide", action="store_true", help="keep handler-returned promises")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("report", help="analyse a saved JSON trace")
    p.add_argument("trace")
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demo", help="verdict matrix of all variants on the shipped programs")
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.set_defaults(func=cmd_demo)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"faasterm: {exc}", file=sys.stderr)
        return USAGE
    except (ScheduleExhausted, ScheduleError, ValueError) as exc:
        print(f"faasterm: {exc}", file=sys.stderr)
        return USAGE
