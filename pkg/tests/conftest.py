from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(__file__).parent / "data"
FASHION_SUBSET = DATA_DIR / "fashion-subset"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance criterion summary -------------------------------------------------

_criteria = []


@pytest.fixture
def criterion(request):
    """Call with ``(number, title, passed, detail)``; printed in the run summary."""

    def record(number, title, passed, detail=""):
        line = f"criterion {number} {title}: {'PASS' if passed else 'FAIL'}" + (f" ({detail})" if detail else "")
        _criteria.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_criteria):
            terminalreporter.write_line(line)
