import numpy as np
import pytest

from lcmat.data import synth_gaussian_mixture
from lcmat.model import init_model
from lcmat.numerics import Rng


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def small_ds():
    return synth_gaussian_mixture(3, 3, 12, 4, 2.0)


@pytest.fixture
def small_model(small_ds):
    return init_model(Rng(5), small_ds.d, small_ds.class_count)


def assert_rel(a, b, tol):
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = max(float(np.max(np.abs(b))), 1e-300)
    assert float(np.max(np.abs(a - b))) / denom <= tol


ACCEPTANCE = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}")
