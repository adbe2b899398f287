"""Drive the container pool through cold start, warm reuse, idle reclaim and a late timeout.

    python3 demos/invoker_timeline.py
"""

from __future__ import annotations

from faasterm import load_shipped, parse_program
from faasterm.invoker import InvokerConfig, Pool

pool = Pool(load_shipped("running_example_end"), "decoupled", InvokerConfig(idle_reclaim_ticks=50))
for payload, gap in (({"val": 42}, 10), ({"val": 112}, 60)):
    result = pool.dispatch(payload)
    b = result.billing
    print(f"{result.response}  [{'cold' if b.cold else 'warm'}: run {b.run_ticks} "
          f"+ await {b.await_ticks}]")
    pool.idle(gap)
    for inst in pool.reclaim():
        print(f"reclaimed instance {inst.id} after {gap} idle ticks")

print("\nchannel:")
for m in pool.channel.messages:
    print(f"  {m.seq:2} {m.direction:8} {m.call:5} instance={m.instance} {m.body}")

# background work that outlives the timeout: the caller already has its answer
late = parse_program("main e\nrespond(e)\np <- async sleep(5000)\nq = finally(p, () => end())\n")
pool = Pool(late, "decoupled")
result = pool.dispatch("hello")
print(f"\n{result.response}; await timed out: {result.awaited.timed_out}")
print("log:", *pool.log, sep="\n  ")
