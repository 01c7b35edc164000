import numpy as np
import pytest

from refdec import ensemble

_ACCEPTANCE_KEY = pytest.StashKey[list]()


class NormalizationAudit:
    """Records the normalization error of every PoE distribution computed in the session."""

    def __init__(self):
        self.count = 0
        self.max_dev = 0.0

    def observe(self, logp):
        self.count += 1
        self.max_dev = max(self.max_dev, abs(float(np.exp(logp).sum()) - 1.0))


AUDIT = NormalizationAudit()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []
    original = ensemble.ReflectiveSampler._combine

    def audited(self, text):
        out = original(self, text)
        AUDIT.observe(out)
        return out

    ensemble.ReflectiveSampler._combine = audited


@pytest.fixture
def normalization_audit():
    return AUDIT


@pytest.fixture
def acceptance(request):
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def report(criterion: str, passed: bool, detail: str = ""):
        lines.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}" + (f" -- {detail}" if detail else ""))

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    tr = terminalreporter
    if lines:
        tr.section("acceptance criteria")
        for line in lines:
            tr.write_line(line)
    if AUDIT.count:
        ok = AUDIT.max_dev < 1e-6
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] AC2 session-wide normalization: "
                      f"{AUDIT.count} PoE distributions, max |sum p - 1| = {AUDIT.max_dev:.2e}")


def pytest_sessionfinish(session, exitstatus):
    if AUDIT.count and AUDIT.max_dev >= 1e-6:
        session.exitstatus = 1
