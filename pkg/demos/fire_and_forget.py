"""A fire-and-forget audit log, before and after adding end().

The first version responds while the log write may still be in flight; under
single execution that write can be lost. The second version ends only after
the write settles, and the decoupled variant makes that safe.

    python3 demos/fire_and_forget.py
"""

from __future__ import annotations

from faasterm import explore, parse_program

BEFORE = """\
main event
p3 <- async db.connect(db)
p4 = then(p3, con => async db.write(con, event, audit))
respond("accepted")
"""

AFTER = BEFORE + "p6 = allSettled([p4])\np7 = finally(p6, () => end())\n"

for title, src, variant in (("before", BEFORE, "single"), ("after", AFTER, "decoupled")):
    report = explore(parse_program(src, title), [{"user": 7}], variant)
    lost = sum(oc.paths for oc in report.outcomes if oc.verdict.broken_promises)
    print(f"{title:6} ({variant}): {lost} of {report.total_paths} schedules lose the audit write")
