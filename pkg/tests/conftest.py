import time

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")

SESSION_START = time.perf_counter()
VERDICTS: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_collection_modifyitems(config, items):
    # acceptance runs last so the determinism criterion can see the whole session time
    items.sort(key=lambda it: it.nodeid.startswith("tests/test_acceptance.py") or "test_acceptance" in it.nodeid)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
        terminalreporter.write_line(f"session time {time.perf_counter() - SESSION_START:.1f} s")
