import math

import numpy as np
import pytest


def bessel_series(x, order=0, terms=60):
    """Power series for I_order(x); the reference for Bessel-type constants."""
    q = 0.25 * x * x
    term = (0.5 * x) ** order / math.factorial(order)
    total = term
    for m in range(1, terms):
        term *= q / (m * (m + order))
        total += term
    return total


def normal_pdf(x, var=1.0):
    return np.exp(-0.5 * np.square(x) / var) / math.sqrt(2 * math.pi * var)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


#: (criterion, passed, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
