import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from angm.graph import BINARY, AttributedGraph  # noqa: E402


def random_graph(rng, n, density=0.4, M=3, attr_mode=BINARY, labels=None):
    upper = np.triu(rng.random((n, n)) < density, k=1)
    adj = (upper | upper.T).astype(np.uint8)
    if attr_mode == BINARY:
        x = (rng.random((n, M)) < 0.5).astype(float)
    else:
        x = rng.normal(size=(n, M))
    return AttributedGraph(adj, x, attr_mode, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class AcceptanceLog:
    def __init__(self):
        self.lines = {}

    def record(self, number, title, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        if passed is None:
            status = "SKIP"
        line = f"criterion {number} [{status}] {title}" + (f": {detail}" if detail else "")
        self.lines[number] = line
        print(line)
        return passed


@pytest.fixture(scope="session")
def acceptance(request):
    log = getattr(request.config, "_acceptance_log", None)
    if log is None:
        log = request.config._acceptance_log = AcceptanceLog()
    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = getattr(config, "_acceptance_log", None)
    if log is None or not log.lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(log.lines):
        terminalreporter.write_line(log.lines[number])
