from __future__ import annotations

from pathlib import Path

import pytest

from ppmsdp import files

FIXTURES = Path(__file__).parent / "fixtures"

# lines collected by the acceptance suite and echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def table1():
    d = FIXTURES / "table1"
    schema, trees = files.load_taxonomy_dir(d)
    history = files.load_history(d, schema)
    return {
        "dir": d,
        "schema": schema,
        "trees": trees,
        "releases": history.releases,
        "theta": files.load_theta(d / "theta.json"),
        "targets": {t.label: t for t in files.load_targets(d / "targets.json")},
    }


@pytest.fixture(scope="session")
def example2():
    d = FIXTURES / "example2"
    schema, trees = files.load_taxonomy_dir(d)
    return {"dir": d, "schema": schema, "trees": trees,
            "records": files.load_records(d / "group.csv", schema, trees)}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
