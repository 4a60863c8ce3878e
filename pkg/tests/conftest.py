from pathlib import Path

import pytest
from threadpoolctl import threadpool_limits

from slotalign.corpus import load_multiwoz

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True, scope="session")
def single_thread_blas():
    with threadpool_limits(1):
        yield


@pytest.fixture
def three_turn():
    return load_multiwoz(FIXTURES / "three_turn" / "corpus.json")


@pytest.fixture
def minimal():
    return load_multiwoz(FIXTURES / "minimal" / "corpus.json")


# ------------------------------------------------------------------ acceptance summary

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(name, ok, detail)``; asserts ``ok``."""
    def record(name: str, ok: bool, detail: str = "") -> None:
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        assert ok, f"{name}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
