from __future__ import annotations

from hypothesis import given, strategies as st

from faasterm.values import (
    UNDEFINED, Bool, ErrorVal, Hash, Int, List, Record, Stored, Str, canon, display,
    from_json, from_python, provenance_of, record, to_json,
)

events = st.frozensets(st.integers(1, 5), max_size=3)
scalars = st.one_of(
    st.just(UNDEFINED), st.booleans().map(Bool), st.integers(-1000, 1000).map(Int),
    st.text(max_size=6).map(Str), st.text(max_size=6).map(ErrorVal),
    st.sampled_from(["stored", "entry"]).map(Stored),
)


def _tag(strategy):
    return st.tuples(strategy, events).map(lambda t: t[0].tagged(t[1]))


values = st.recursive(
    _tag(scalars),
    lambda inner: st.one_of(
        _tag(inner.map(Hash)),
        _tag(st.lists(inner, max_size=3).map(lambda xs: List(tuple(xs)))),
        _tag(st.dictionaries(st.sampled_from(["val", "hash", "x"]), inner, max_size=3)
             .map(lambda d: Record(tuple(d.items())))),
    ),
    max_leaves=8,
)


def test_hash_is_symbolic_and_injective():
    assert Hash(Int(42)) == Hash(Int(42))
    assert Hash(Int(42)) != Hash(Int(112))
    assert display(Hash(Int(42))) == "H(42)"


def test_equality_ignores_provenance_but_canon_does_not():
    a, b = Int(42, prov=frozenset({1})), Int(42, prov=frozenset({2}))
    assert a == b
    assert canon(a) != canon(b)


def test_display_matches_table_notation():
    v = record(stored=Stored("stored"), hash=Hash(Int(42)))
    assert display(v) == "{stored: S(stored), hash: H(42)}"
    assert display(ErrorVal("boom")) == "Error(boom)"
    assert display(UNDEFINED) == "undefined"


def test_from_python_builds_records_and_lists():
    v = from_python({"val": 42, "tags": ["a", True], "none": None}, prov=[3])
    assert v == record(val=Int(42), tags=List((Str("a"), Bool(True))), none=UNDEFINED)
    assert v.prov == frozenset({3})


def test_provenance_of_collects_nested_events():
    v = record(val=Int(112, prov=frozenset({2})), hash=Hash(Int(42, prov=frozenset({1}))))
    assert provenance_of(v) == {1, 2}


@given(values)
def test_json_round_trip_keeps_provenance(v):
    back = from_json(to_json(v))
    assert back == v
    assert canon(back) == canon(v)


@given(values, events)
def test_tagging_only_grows_provenance(v, extra):
    t = v.tagged(extra)
    assert t == v
    assert t.prov == v.prov | extra
