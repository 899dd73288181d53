import numpy as np
import pytest
from hypothesis import settings

from psdi.core import SparseMatrix
from psdi.precond import DensePreconditioner

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def random_indefinite(n, rng, p=None):
    """Dense symmetric matrix with p negative and n-p positive eigenvalues."""
    p = n // 2 if p is None else p
    lam = np.concatenate([-rng.uniform(0.5, 3.0, p), rng.uniform(0.5, 3.0, n - p)])
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = (Q * lam) @ Q.T
    return 0.5 * (A + A.T)


def random_spd(n, rng, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    T = (Q * np.geomspace(1.0, cond, n)) @ Q.T
    return 0.5 * (T + T.T)


def dense_T_norm(v, Td):
    return float(np.sqrt(v @ Td @ v))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def indefinite_system(rng):
    n = 30
    A = SparseMatrix.from_dense(random_indefinite(n, rng))
    T = DensePreconditioner(random_spd(n, rng))
    f = rng.standard_normal(n)
    return A, T, f


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
