from __future__ import annotations

import pytest

from faasterm import syntax as S
from faasterm.invoker import (InvokerConfig, Lifecycle, LifecycleError, Pool, ReclaimPolicy,
                              every_schedule, reclaim)
from faasterm.parser import parse_program

THREE_SLEEPS = """\
main e
a <- async sleep(1)
b <- async sleep(2)
c <- async sleep(3)
d = allSettled([a, b, c])
f = finally(d, () => end())
respond(e)
"""
END_FIRST = "main e\np <- async sleep(5)\nend()\nrespond(p)\n"
NO_END = "main e\nrespond(e)\n"
LATE_SLEEP = "main e\nrespond(e)\np <- async sleep(2000)\nq = finally(p, () => end())\n"
SLOW_RESPONSE = "main e\np <- async sleep(2000)\nrespond(p)\n"
LEFTOVER = "main e\np <- async sleep(50)\nrespond(e)\n"


class StepsFirst:
    """Run straight-line code before letting any I/O complete."""

    def latency(self, op, index):
        return S.op_latency(op).lo

    def choose(self, w, options):
        return options.index(("step",)) if ("step",) in options else 0


def pool_for(src, variant="decoupled", **cfg):
    config = InvokerConfig(**cfg) if cfg else None
    return Pool(parse_program(src), variant, config, schedule=StepsFirst())


# -- configuration ---------------------------------------------------------------


def test_config_defaults():
    c = InvokerConfig()
    assert (c.cold_start_ticks, c.warm_await_overhead, c.timeout_ticks) == (25, 8, 1000)


def test_config_key_value_and_json_agree():
    kv = InvokerConfig.parse("# tuned\ncold_start_ticks = 40\ntimeout_ticks=50  # short\n")
    js = InvokerConfig.parse('{"cold_start_ticks": 40, "timeout_ticks": 50}')
    assert kv == js
    assert kv.warm_await_overhead == 8


@pytest.mark.parametrize("text", ["bogus=1", "pool_size=0", "timeout_ticks=-3", "no equals"])
def test_config_rejects(text):
    with pytest.raises(ValueError):
        InvokerConfig.parse(text)


def test_config_load(tmp_path):
    f = tmp_path / "inv.conf"
    f.write_text("pool_size=2\n")
    assert InvokerConfig.load(f).pool_size == 2


# -- lifecycle -------------------------------------------------------------------


def test_illegal_lifecycle_moves(example_end):
    pool = Pool(example_end, "decoupled")
    pool.dispatch({"val": 42})
    inst = pool.instances[0]
    assert inst.lifecycle is Lifecycle.INITIALIZED
    with pytest.raises(LifecycleError):
        inst.move(Lifecycle.AWAITING)
    with pytest.raises(LifecycleError):
        pool.await_phase(inst)
    inst.move(Lifecycle.STOPPED)
    with pytest.raises(LifecycleError):
        inst.move(Lifecycle.INITIALIZED)


def test_protocol_order(example_end):
    pool = Pool(example_end, "decoupled")
    pool.dispatch({"val": 42})
    pool.dispatch({"val": 112})
    seen = [(m.direction, m.call) for m in pool.channel.messages]
    assert seen == [("request", "init"), ("response", "init"),
                    ("request", "run"), ("response", "run"),
                    ("request", "await"), ("response", "await"),
                    ("request", "run"), ("response", "run"),
                    ("request", "await"), ("response", "await")]


# -- billing ---------------------------------------------------------------------


def test_cold_then_warm_overheads(example_end):
    pool = Pool(example_end, "decoupled")
    first = pool.dispatch({"val": 42})
    second = pool.dispatch({"val": 112})
    assert first.billing.cold and not second.billing.cold
    assert first.instance == second.instance
    assert first.billing.await_ticks >= 25
    assert second.billing.await_ticks >= 8
    assert first.billing.total == first.billing.run_ticks + first.billing.await_ticks


def test_overheads_are_exactly_the_configured_constants(example_end):
    def bills(**cfg):
        pool = Pool(example_end, "decoupled", InvokerConfig(**cfg))
        return [pool.dispatch({"val": v}).billing for v in (42, 112)]

    base = bills()
    bumped = bills(cold_start_ticks=125, warm_await_overhead=58)
    assert bumped[0].await_ticks - base[0].await_ticks == 100
    assert bumped[1].await_ticks - base[1].await_ticks == 50
    assert [b.run_ticks for b in base] == [b.run_ticks for b in bumped]


def test_idle_time_is_never_billed(example_end):
    def run(gap):
        pool = Pool(example_end, "decoupled")
        pool.dispatch({"val": 42})
        pool.idle(gap)
        pool.dispatch({"val": 112})
        return pool

    busy, lazy = run(0), run(500)
    assert [b.total for b in busy.billing] == [b.total for b in lazy.billing]
    assert lazy.clock - busy.clock == 500
    assert sum(b.total for b in lazy.billing) == lazy.clock - 500


def test_coupled_variants_never_await(example):
    for variant in ("single", "reuse", "wait-all"):
        pool = Pool(example, variant)
        for v in (42, 112):
            r = pool.dispatch({"val": v})
            assert r.awaited is None and r.billing.await_ticks == 0
        assert "await" not in pool.channel.calls()


def test_single_execution_never_reuses(example):
    pool = Pool(example, "single")
    a, b = pool.dispatch({"val": 42}), pool.dispatch({"val": 112})
    assert a.instance != b.instance
    assert a.billing.cold and b.billing.cold
    assert pool.instances[0].lifecycle is Lifecycle.STOPPED


def test_reuse_keeps_the_instance_warm(example):
    pool = Pool(example, "reuse")
    a, b = pool.dispatch({"val": 42}), pool.dispatch({"val": 112})
    assert a.instance == b.instance and not b.billing.cold
    assert pool.channel.calls() == ["init", "run", "run"]


# -- await phase -----------------------------------------------------------------


def test_await_returns_at_once_when_end_already_ran():
    r = pool_for(END_FIRST).dispatch(5)
    assert r.awaited.steps == 0 and not r.awaited.timed_out
    assert r.billing.await_ticks == 25


def test_await_waits_for_exactly_the_pending_resolves():
    pool = pool_for(THREE_SLEEPS)
    r = pool.dispatch(5)
    assert r.awaited.steps == 3
    assert r.verdict.empty and r.verdict.residual == []
    steps = pool.instances[0].trace().steps
    after = steps[[s.kind for s in steps].index("respond") + 1:]
    assert [s.command for s in after if s.kind == "resolve"][:3] == \
        ["sleep(1)", "sleep(2)", "sleep(3)"]


def test_await_times_out_when_end_never_runs():
    pool = pool_for(NO_END)
    r = pool.dispatch(5)
    assert r.awaited.timed_out and r.billing.timed_out == "await"
    assert r.billing.total == pool.config.timeout_ticks + 1
    assert [str(m) for m in pool.caller] == ["#1 ok: 5"]
    assert pool.instances[0].lifecycle is Lifecycle.STOPPED


def test_await_timeout_sends_no_second_message():
    pool = pool_for(LATE_SLEEP)
    r = pool.dispatch(5)
    assert not r.response.error
    assert len(pool.caller) == 1
    assert [m for m in pool.channel.messages if m.call == "run" and m.direction == "response"] \
        == [pool.channel.messages[3]]
    assert r.billing.timed_out == "await"
    assert [site for _, site in r.verdict.broken_promises] == ["p3"]
    assert any("timeout while awaiting" in line for line in pool.log)


def test_run_timeout_reports_an_error():
    pool = pool_for(SLOW_RESPONSE, "reuse")
    r = pool.dispatch(5)
    assert r.response.error and str(r.response) == "#1 error: Error(timeout)"
    assert r.billing.timed_out == "run" and r.billing.run_ticks == 1001
    assert [site for _, site in r.verdict.broken_promises] == ["p2"]
    assert pool.instances[0].lifecycle is Lifecycle.STOPPED


# -- reclaim ---------------------------------------------------------------------


def test_reclaim_leaves_fresh_instances_alone():
    pool = pool_for(LEFTOVER, "reuse")
    pool.dispatch(1)
    reclaim(pool, ReclaimPolicy(10))
    assert pool.instances[0].lifecycle is Lifecycle.INITIALIZED


def test_reclaim_stops_idle_instances_and_breaks_their_promises():
    pool = pool_for(LEFTOVER, "reuse")
    pool.dispatch(1)
    pool.idle(11)
    reclaim(pool, ReclaimPolicy(10))
    inst = pool.instances[0]
    assert inst.lifecycle is Lifecycle.STOPPED
    assert [site for _, site in inst.verdict.broken_promises] == ["p2"]
    assert "broken promises: p2" in pool.log[-1]


def test_running_instance_is_never_reclaimed():
    seen = []

    class Meddler(StepsFirst):
        def choose(self, w, options):
            seen.append(pool.reclaim(0))
            return super().choose(w, options)

    pool = Pool(parse_program(THREE_SLEEPS), "decoupled", schedule=Meddler())
    pool.dispatch(1)
    assert seen and all(r == [] for r in seen)
    assert pool.instances[0].lifecycle is Lifecycle.INITIALIZED


def test_eviction_when_pool_is_full():
    pool = pool_for(NO_END, "decoupled", pool_size=1, timeout_ticks=5)
    pool.dispatch(1)
    pool.dispatch(2)
    assert [i.lifecycle for i in pool.instances] == [Lifecycle.STOPPED, Lifecycle.STOPPED]
    assert len(pool.caller) == 2


# -- exhaustive ------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["single", "reuse", "wait-all", "decoupled"])
def test_one_caller_message_per_event_in_every_schedule(example, example_end, variant):
    prog = example_end if variant == "decoupled" else example
    count = 0
    for pool in every_schedule(prog, [{"val": 42}, {"val": 112}], variant,
                               between=lambda p: p.idle(3)):
        count += 1
        assert [m.activation for m in pool.caller] == [1, 2]
        runs = [m for m in pool.channel.messages if m.call == "run" and m.direction == "response"]
        assert len(runs) == 2
        awaits = pool.channel.calls().count("await")
        assert awaits == (2 if variant == "decoupled" else 0)
        assert sum(b.total for b in pool.billing) == pool.clock - 6
    assert count > 1
