import numpy as np
import pytest

from ttnbug.cli import random_tree


@pytest.fixture
def rng():
    return np.random.default_rng(20241018)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def make_random_tree(d, rng, n=2):
    return random_tree(d, rng, n)


ACCEPTANCE = []


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
