import numpy as np
import pytest

from skyseg import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def f64(a, grad=True):
    return T.Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def random_simplex(rng, shape, axis=1):
    """Strictly positive probabilities summing to 1 along ``axis``."""
    raw = rng.uniform(0.05, 1.0, size=shape)
    return raw / raw.sum(axis=axis, keepdims=True)


def random_onehot(rng, n, c, h, w):
    labels = rng.integers(0, c, size=(n, h, w))
    return np.moveaxis(np.eye(c)[labels], -1, 1), labels


VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        VERDICTS.append(f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
