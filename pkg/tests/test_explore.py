from __future__ import annotations

import pytest

from faasterm.engine import Scripted, run
from faasterm.explore import StateSpaceExceeded, enumerate_naive, explore
from faasterm.parser import parse_program
from faasterm.semantics import Variant
from faasterm.values import Hash, Int, Record, from_json

from conftest import E42, E42_112

# (program, variant, number of events) -> (outcome classes, maximal schedules);
# frozen after cross-checking against the naive enumerator
GOLDEN = {
    ("example", "single", 1): (3, 10),
    ("example", "single", 2): (9, 100),
    ("example", "reuse", 1): (3, 10),
    ("example", "reuse", 2): (35, 821),
    ("example", "wait-all", 1): (1, 10),
    ("example", "wait-all", 2): (1, 200),
    ("example_end", "decoupled", 1): (2, 10),
    ("example_end", "decoupled", 2): (4, 200),
}


@pytest.mark.parametrize("key", sorted(GOLDEN))
def test_outcome_counts(key, request):
    prog, variant, n = key
    events = (E42, E42_112)[n - 1]
    report = explore(request.getfixturevalue(prog), events, variant, analyze=False)
    assert (len(report.outcomes), report.total_paths) == GOLDEN[key]
    assert report.complete


@pytest.mark.parametrize("prog", ["example", "example_end"])
@pytest.mark.parametrize("variant", [v.value for v in Variant])
@pytest.mark.parametrize("events", [E42, E42_112], ids=["1ev", "2ev"])
def test_memoized_matches_naive(prog, variant, events, request):
    p = request.getfixturevalue(prog)
    report = explore(p, events, variant, analyze=False)
    naive = enumerate_naive(p, events, variant)
    assert report.outcome_keys() == set(naive)
    assert {o.key: o.paths for o in report.outcomes} == naive


def test_witnesses_replay_to_their_outcome(example):
    from faasterm.engine import Engine, drive

    report = explore(example, E42_112, "reuse", analyze=False)
    for oc in report.outcomes:
        engine = Engine(example, "reuse")
        w = engine.initial(E42_112, record=False)
        drive(engine, w, Scripted(oc.witness))
        assert engine.outcome(w) == oc.key


def test_single_event_residual_and_clean_outcomes(example):
    report = explore(example, E42, "single")
    dbs = [oc.summary["db"] for oc in report.outcomes]
    residuals = [oc.summary["residual"] for oc in report.outcomes]
    assert {"entry": "{val: 42, hash: H(42)}"} in dbs
    assert ["p12"] in residuals
    assert any(oc.verdict.empty for oc in report.outcomes)
    assert any(oc.verdict.broken_promises for oc in report.outcomes)


def test_decoupled_every_outcome_writes_and_drains(example_end):
    report = explore(example_end, E42, "decoupled")
    want = Record((("val", Int(42)), ("hash", Hash(Int(42)))))
    orders = set()
    for oc in report.outcomes:
        t = run(example_end, E42, "decoupled", Scripted(oc.witness))
        assert from_json(t.db["entry"]) == want
        assert t.final_state["pending"] == []
        assert oc.verdict.empty
        kinds = [e[0] for e in t.effects]
        orders.add(kinds.index("respond") < kinds.index("write"))
    assert orders == {True, False}


def test_reuse_subsumes_single(example):
    single = explore(example, E42, "single", analyze=False).outcome_keys()
    reuse = explore(example, E42, "reuse", analyze=False).outcome_keys()
    assert single <= reuse


def test_empty_program_has_one_outcome():
    p = parse_program("main event\n")
    report = explore(p, E42, "single")
    assert len(report.outcomes) == 1
    assert report.outcomes[0].summary["responses"] == {"1": "undefined"}


def test_state_bound_raises_with_partial_report(example):
    with pytest.raises(StateSpaceExceeded) as info:
        explore(example, E42_112, "reuse", max_states=50)
    partial = info.value.partial
    assert not partial.complete
    assert partial.outcomes


def test_monitor_sees_every_rule(example):
    names = set()
    explore(example, E42_112, "reuse", analyze=False,
            monitor=lambda before, a, after, w: names.add(type(a).__name__))
    assert names == {"Receive", "Respond", "Invalidate", "LocalStep", "StartAsync", "Resolve"}
