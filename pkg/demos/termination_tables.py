"""Replay the three classic runs of the database example and print their tables.

    python3 demos/termination_tables.py
"""

from __future__ import annotations

import json
from importlib import resources

from faasterm import detect, load_shipped, run
from faasterm.values import display, from_json


def script(name):
    return json.loads(resources.files("faasterm").joinpath("data", name).read_text())


program = load_shipped("running_example")
runs = [
    ("function stops at the response", [{"val": 42}], "single", "table1.sched"),
    ("write finishes before the response", [{"val": 42}], "single", "table2.sched"),
    ("instance reused for a second event", [{"val": 42}, {"val": 112}], "reuse", "table3.sched"),
]

for title, events, variant, sched in runs:
    trace = run(program, events, variant, script(sched))
    print(f"== {title} ({variant}, {sched})")
    print(trace.table())
    db = {k: display(from_json(v)) for k, v in trace.db.items()}
    print("db:", db or "(empty)")
    for line in detect(trace).lines():
        print("  ", line)
    print()
