import numpy as np
import pytest

_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance-criterion outcome for the end-of-run summary."""

    def record(name, passed, detail=""):
        _ACCEPTANCE.append((name, bool(passed), detail))
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


@pytest.fixture
def rs():
    return np.random.default_rng(12345)
