from pathlib import Path

import pytest

from blocktree.graph import parse_graph

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def load_fixture_graph(name):
    return parse_graph((FIXTURES / name).read_text())


@pytest.fixture
def chain9():
    return load_fixture_graph("chain9.txt")


@pytest.fixture
def chain9_cut():
    return load_fixture_graph("chain9_cut.txt")


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
