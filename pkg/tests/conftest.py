from __future__ import annotations

import json
from importlib import resources

import pytest

from faasterm import load_shipped
from faasterm.engine import run

E42 = [{"val": 42}]
E42_112 = [{"val": 42}, {"val": 112}]


def shipped_script(name: str) -> list[int]:
    return json.loads(resources.files("faasterm").joinpath("data", name).read_text())


@pytest.fixture(scope="session")
def example():
    return load_shipped("running_example")


@pytest.fixture(scope="session")
def example_end():
    return load_shipped("running_example_end")


@pytest.fixture(scope="session")
def table1(example):
    return run(example, E42, "single", shipped_script("table1.sched"))


@pytest.fixture(scope="session")
def table2(example):
    return run(example, E42, "single", shipped_script("table2.sched"))


@pytest.fixture(scope="session")
def table3(example):
    return run(example, E42_112, "reuse", shipped_script("table3.sched"))


# criterion number -> (passed, seconds, title); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, secs, title = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  "
                                    f"{secs:6.2f}s  {title}")
