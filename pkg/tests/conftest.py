import numpy as np
import pytest

from mmitr.data import Dataset

# criterion id -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_dataset(rng, n=40, p=3, k=3, outcomes=True, survival=False):
    X = rng.normal(size=(n, p))
    A = np.concatenate([np.arange(1, k + 1), rng.integers(1, k + 1, size=n - k)])
    rng.shuffle(A)
    kw = {}
    if outcomes:
        kw["outcomes"] = rng.normal(size=n)
    if survival:
        kw["time"] = rng.exponential(size=n)
        kw["event"] = rng.integers(0, 2, size=n)
    return Dataset(X, A, k, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
