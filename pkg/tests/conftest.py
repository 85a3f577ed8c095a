import numpy as np
import pytest

from generic_holdout.core import Dataset, RngStream

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    _ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def stream():
    return RngStream(12345)


def make_dataset(xs, ys):
    ys = np.asarray(ys, dtype=float)
    xs = np.asarray(xs, dtype=float)
    return Dataset(xs.reshape(len(ys), -1) if ys.size else xs.reshape(0, 1), ys)
