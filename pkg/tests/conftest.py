import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from choreocep.bus import InMemoryBus  # noqa: E402
from choreocep.clock import Scheduler, VirtualClock  # noqa: E402
from choreocep.events import Event  # noqa: E402
from choreocep.statestore import InMemoryStateStore  # noqa: E402

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def clock():
    return VirtualClock()


@pytest.fixture
def scheduler(clock):
    return Scheduler(clock)


@pytest.fixture
def bus(clock):
    return InMemoryBus(clock)


@pytest.fixture
def store(clock):
    return InMemoryStateStore(clock)


def ev(etype, eid, t=0, source="test", **attrs):
    return Event(etype, eid, t, attrs, source)
