import contextlib

import numpy as np
import pytest

from lpcond.design import Sample

_CRITERIA = {}


@contextlib.contextmanager
def criterion(number: int, label: str):
    """Record a named acceptance criterion as PASS or FAIL, re-raising failures."""
    info = {"label": label, "detail": ""}
    try:
        yield info
    except BaseException:
        _CRITERIA[number] = ("FAIL", info)
        raise
    _CRITERIA[number] = ("PASS", info)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        status, info = _CRITERIA[k]
        line = f"criterion {k:2d} {status}: {info['label']}"
        if info["detail"]:
            line += f" [{info['detail']}]"
        terminalreporter.write_line(line)


def random_sample(rng, n, d=1, y_range=(0.0, 1.0)):
    y = rng.uniform(*y_range, size=n)
    x = rng.uniform(-1.0, 1.0, size=(n, d))
    return Sample(y, x)


@pytest.fixture
def rng():
    return np.random.default_rng(20260610)
