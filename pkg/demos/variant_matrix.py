"""Explore every schedule of the example under each termination variant.

Shows how many distinct outcomes each variant admits and which detectors
fire in them.

    python3 demos/variant_matrix.py
"""

from __future__ import annotations

from faasterm import explore, load_shipped

EVENTS = [{"val": 42}, {"val": 112}]

for variant in ("single", "reuse", "wait-all", "decoupled"):
    name = "running_example_end" if variant == "decoupled" else "running_example"
    report = explore(load_shipped(name), EVENTS, variant)
    print(f"{variant:10} {name:20} states={report.states:4} "
          f"schedules={report.total_paths:4} outcomes={len(report.outcomes)}")
    for oc in report.outcomes[:3]:
        bad = [line for line in oc.verdict.lines() if not line.startswith("info")]
        print(f"    {oc.paths:4} schedule(s): {'; '.join(bad) or 'clean'}")
    if len(report.outcomes) > 3:
        print(f"    ... {len(report.outcomes) - 3} more")
