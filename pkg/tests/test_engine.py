from __future__ import annotations

import json

import pytest

from faasterm.engine import (
    Engine, NotSuspended, ReplayDivergence, ScheduleError, ScheduleExhausted, Scripted, Seeded,
    drive, replay, run, suspend_resume, symbolic_script,
)
from faasterm.parser import parse_program
from faasterm.semantics import DONE, FREE
from faasterm.trace import ExecutionTrace
from faasterm.values import Hash, Int, Record, Stored, from_json, provenance_of

from conftest import E42, E42_112, shipped_script

# unresolved-promise columns, row by row, as printed in the three example tables
TABLE1_PR = [[], [], [], ["p12"], ["p12", "p16"], ["p12"], ["p12", "p17"], ["p12"],
             ["p12", "p18"], ["p12"]]
TABLE2_PR = [[], [], [], ["p12"], [], ["p13"], [], ["p16"], [], ["p17"], [], ["p18"], []]
TABLE3_PR = TABLE1_PR + [["p12"], ["p12"], [], ["p13"], [], []] + TABLE1_PR[3:]


def unresolved(trace) -> list[list[str]]:
    return [sorted(site for site, _ in r.unresolved) for r in trace.rows]


def test_table1(table1):
    assert unresolved(table1) == TABLE1_PR
    assert [r.loc for r in table1.rows] == ["l8", "l9", "l10", "l12", "l16", "l16", "l17", "l17",
                                            "l18", "l18"]
    assert table1.rows[-1].comment == "response produced"
    assert table1.db == {}
    resp = from_json(table1.responses[0]["value"])
    assert resp == Record((("stored", Stored("stored")), ("hash", Hash(Int(42)))))
    assert [table1.promise(p)["site"] for _, p in table1.broken] == ["p12"]


def test_table2(table2):
    assert unresolved(table2) == TABLE2_PR
    assert from_json(table2.db["entry"]) == Record((("val", Int(42)), ("hash", Hash(Int(42)))))
    assert table2.broken == []
    assert table2.final_state["pending"] == []


def test_table3(table3):
    assert unresolved(table3) == TABLE3_PR
    assert table3.rows[10].comment == "promise p12 carried over from previous run"
    written = from_json(table3.db["entry"])
    assert written == Record((("val", Int(112)), ("hash", Hash(Int(42)))))
    assert provenance_of(written) == {1, 2}
    assert [r.command for r in table3.rows if r.comment == "write started"] == [
        "con.write({val: 112, hash: H(42)})"]
    assert [table3.promise(p)["site"] for p in table3.final_state["pending"]] == ["p12"]


def test_table_scripts_from_readable_picks(example):
    assert symbolic_script(example, E42, "single", ["step", "p16", "p17"]) == shipped_script("table1.sched")
    assert symbolic_script(example, E42, "single", ["p12", "p13"]) == shipped_script("table2.sched")
    picks = ["step", "p16", "p17", "receive", "step", "p12", "p13", "step", "p16", "p17"]
    assert symbolic_script(example, E42_112, "reuse", picks) == shipped_script("table3.sched")


# -- replay and determinism ------------------------------------------------------------


@pytest.mark.parametrize("name", ["table1", "table2", "table3"])
def test_replay_is_identical(name, request):
    trace = request.getfixturevalue(name)
    again = replay(trace)
    assert again.canonical() == trace.canonical()


def test_replay_through_json(table3):
    loaded = ExecutionTrace.loads(table3.canonical())
    assert loaded.canonical() == table3.canonical()
    assert replay(loaded).canonical() == table3.canonical()


def test_seeded_runs_are_deterministic(example):
    a = run(example, E42_112, "reuse", Seeded(7))
    b = run(example, E42_112, "reuse", Seeded(7))
    assert a.canonical() == b.canonical()
    assert replay(a).canonical() == a.canonical()


def test_flipped_choice_diverges_at_first_differing_step(table1, example):
    tampered = ExecutionTrace.loads(table1.canonical())
    tampered.schedule["choices"] = [0, 0, 0, 0]
    other = run(example, E42, "single", [0, 0, 0, 0])
    expected = next(i for i, (a, b) in enumerate(zip(table1.steps, other.steps))
                    if a.to_json() != b.to_json())
    with pytest.raises(ReplayDivergence) as info:
        replay(tampered)
    assert info.value.index == expected


def test_short_script_is_exhausted(example):
    with pytest.raises(ScheduleExhausted):
        run(example, E42, "single", [0])


def test_out_of_range_choice(example):
    with pytest.raises(ScheduleError):
        run(example, E42, "single", [5])


# -- behaviour ---------------------------------------------------------------------------


def test_empty_program_responds_undefined():
    p = parse_program("main event\n")
    t = run(p, [42], "single", [])
    assert [from_json(r["value"]).__class__.__name__ for r in t.responses] == ["Undefined"]


def test_decoupled_response_precedes_end(example_end):
    t = run(example_end, E42, "decoupled", Seeded(0))
    kinds = [e[0] for e in t.effects]
    assert kinds.index("respond") < kinds.index("end")
    assert t.status == "done" and t.final_state["event"] == FREE and t.final_state["pending"] == []


def test_program_without_end_is_stuck_under_decoupled(example):
    t = run(example, E42, "decoupled", Seeded(0))
    assert t.status == "stuck"


def test_wait_all_delays_response_until_nothing_pending(example):
    t = run(example, E42, "wait-all", Seeded(3))
    respond = next(s for s in t.steps if s.kind == "respond")
    assert respond.pending == ()
    assert t.db  # the write finished before the response went out


def test_single_execution_spawns_fresh_instance(example):
    t = run(example, E42_112, "single", Seeded(1))
    instances = {s.instance for s in t.steps if s.kind == "receive"}
    assert instances == {1, 2}


def test_unhandled_rejection_is_a_diagnostic_not_a_crash():
    p = parse_program("main e\np <- async fail(\"boom\")\nrespond(1)\n")
    t = run(p, [1], "wait-all", Seeded(0))
    assert t.status == "done"
    from faasterm.analysis import detect

    assert any("unhandled rejection" in d for d in detect(t).diagnostics)


def test_clock_never_decreases_and_io_is_pending(example):
    seen = []

    def monitor(before, action, after, w):
        seen.append(w.clock)
        assert set(w.io) <= set(after.pending) | {getattr(action, "pid", None)}

    for seed in range(20):
        seen.clear()
        engine = Engine(example, "reuse")
        engine.on_action = monitor
        w = engine.initial(E42_112)
        drive(engine, w, Seeded(seed))
        assert seen == sorted(seen)


# -- deadlines -------------------------------------------------------------------------------

DEADLINE = """main e
p <- async db.connect(db) deadline {d}
respond(1)
q = then(p, c => c)
"""


def _paused(deadline: str):
    p = parse_program(DEADLINE.format(d=deadline).replace(" deadline none", ""))
    engine = Engine(p, "reuse")
    w = engine.initial([1, 2], record=True)
    drive(engine, w, Scripted([0]), stop=lambda w: w.fn.event == FREE and w.next_eid > 1)
    assert w.io  # the connection is still in flight while the function is idle
    return engine, w


def _second_connect(engine, w):
    drive(engine, w, Scripted([0, 1]), stop=lambda w: any(r.kind == "resolve" for r in w.rows))
    rows = [r for r in w.rows if r.kind == "resolve"]
    return rows[0]


def test_deadline_passed_while_suspended_rejects():
    engine, w = _paused("10")
    resumed = suspend_resume(w, 20)
    row = _second_connect(engine, resumed)
    assert row.data["outcome"] == "rejected"
    assert row.comment == "connection failed"


def test_zero_suspension_poisons_nothing():
    engine, w = _paused("10")
    row = _second_connect(engine, suspend_resume(w, 0))
    assert row.data["outcome"] == "fulfilled"


def test_no_deadline_never_poisoned():
    engine, w = _paused("none")
    row = _second_connect(engine, suspend_resume(w, 10_000))
    assert row.data["outcome"] == "fulfilled"


def test_suspend_requires_idle_function(example):
    engine = Engine(example, "single")
    w = engine.initial(E42)
    drive(engine, w, Scripted([0]), stop=lambda w: w.fn.processing)
    with pytest.raises(NotSuspended):
        suspend_resume(w, 5)


def test_trace_json_has_schema_and_sorted_keys(table1):
    doc = json.loads(table1.canonical())
    assert doc["schema"] == 1
    assert list(doc) == sorted(doc)
    assert table1.schedule == {"choices": [0, 1, 1], "latencies": [1, 1, 1]}
    assert table1.final_state["event"] == DONE
