import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

# (criterion number, title) -> (status, detail); filled by test_acceptance
ACCEPTANCE = {}


def record(number, title, status, detail=""):
    ACCEPTANCE[(number, title)] = (status, detail)
    print("[%s] criterion %d: %s %s" % (status, number, title, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[(number, title)]
        terminalreporter.write_line("%-4s %2d  %s  %s" % (status, number, title, detail))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def disk(shape, center, radius):
    rr, cc = np.ogrid[:shape[0], :shape[1]]
    return (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius ** 2
