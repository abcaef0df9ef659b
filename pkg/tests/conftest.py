import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

SMALL = {
    "population_size": 96,
    "heldout_size": 32,
    "batch_size": 32,
    "eval_rollouts": 8,
    "stages": ["accuracy:6:3", "compression:9:3", "accuracy:6:3"],
    "trace_every": 3,
}


@pytest.fixture
def small_values():
    return dict(SMALL)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
