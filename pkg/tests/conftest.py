import numpy as np
import pytest

from subjadapt.dataio import EEGRecord


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_records(n_subjects, n_classes, per_class, shape=(2, 3), seed=0):
    rng = np.random.default_rng(seed)
    return [EEGRecord(s, c, rng.normal(size=shape))
            for s in range(n_subjects) for c in range(n_classes) for _ in range(per_class)]


def pytest_terminal_summary(terminalreporter):
    import sys
    acceptance = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, (passed, detail) in sorted(acceptance.RESULTS.items()):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {n}: {detail}")
