import math
import time

import numpy as np
import pytest

from sdmmse.monitor import build_lut

ACCEPTANCE_LINES = {}


def record(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


@pytest.fixture(scope='session')
def full_lut_timed():
    t0 = time.perf_counter()
    lut = build_lut()
    return lut, time.perf_counter() - t0


@pytest.fixture(scope='session')
def full_lut(full_lut_timed):
    return full_lut_timed[0]


@pytest.fixture(scope='session')
def small_lut():
    snr = 10.0 * np.log10(np.logspace(0.0, 3.0, 16))
    return build_lut(math.inf, snr, np.linspace(0.0, 15.0, 16))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section('acceptance criteria')
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
