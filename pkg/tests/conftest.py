import math

import numpy as np
import pytest

from cogarch import CogarchSpec, CompoundPoissonSpec, NormalJumps


def taylor_expm(A, t=1.0, terms=40):
    """Truncated exponential series; independent of scipy."""
    A = np.asarray(A, dtype=float) * t
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms + 1):
        term = term @ A / k
        out = out + term
    return out


def taylor_expm_squared(A, t, terms=40):
    """Series with manual halving so large ||At|| stays accurate."""
    s = max(0, math.ceil(math.log2(max(1.0, np.linalg.norm(A, 1) * abs(t)))))
    M = taylor_expm(A, t / 2**s, terms)
    for _ in range(s):
        M = M @ M
    return M


def random_admissible_spec(rng, q):
    """Random spec with real, negative roots so that V stays positive."""
    roots = rng.uniform(0.3, 2.0, q)
    b = np.poly(-roots)[1:]
    a = np.zeros(q)
    a[0] = rng.uniform(0.05, 0.6) * b[-1]
    if q > 1 and rng.random() < 0.5:
        a[1] = rng.uniform(0.0, 0.2) * a[0] + 1e-3
    return CogarchSpec(a, b, rng.uniform(0.02, 0.5))


@pytest.fixture
def spec11():
    return CogarchSpec([0.038], [0.053], 0.04)


@pytest.fixture
def spec22():
    return CogarchSpec([0.2], [1.5, 0.5], 0.04)


@pytest.fixture
def std_noise():
    return CompoundPoissonSpec(1.0, NormalJumps(0.0, 1.0))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
