import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


GATE: list[tuple[str, bool, str]] = []


@pytest.fixture
def gate():
    """Record one acceptance line; the test still asserts on its own."""
    def record(name: str, ok, detail: str = "") -> bool:
        GATE.append((name, ok, detail))
        print(f"{_status(ok)} {name}: {detail}")
        return ok
    return record


def _status(ok) -> str:
    return ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not GATE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in GATE:
        terminalreporter.write_line(f"{_status(ok)} {name}: {detail}")
