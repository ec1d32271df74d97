import numpy as np
import pytest

from courtrate.params import REFERENCE_HYPER

# (criterion number, title, passed, detail) appended by test_acceptance.py
ACCEPTANCE_RESULTS = []


def record(number, title, passed, detail=""):
    ACCEPTANCE_RESULTS.append((number, title, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title}  {detail}".rstrip())


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def hyper():
    return REFERENCE_HYPER
