import numpy as np
import pytest

from w2s_rf import features as F
from w2s_rf import spectrum as S


def sphere(n, d, rng):
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def arccos_gram(U, V, d):
    # E_x[relu(u.x) relu(v.x)] on the unit sphere in closed form
    c = np.clip(U @ V.T, -1.0, 1.0)
    th = np.arccos(c)
    return (np.sin(th) + (np.pi - th) * c) / (2 * np.pi * d)


@pytest.fixture(scope="session")
def relu8():
    return S.relu_spectrum(8, 1e-8)


@pytest.fixture(scope="session")
def relu32():
    return S.relu_spectrum(32, 1e-8)


@pytest.fixture(scope="session")
def lin_thm32():
    return S.linear_spectrum("thm32", k=1, d=65)


@pytest.fixture(scope="session")
def relu8_teacher(relu8):
    from w2s_rf import teacher
    ens = F.sample(S.RELU, 12, 8, relu8, seed=3)
    return teacher.train(ens, relu8, F.make_target("linear", relu8))


# ---------------------------------------------------------------- acceptance report

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per criterion; printed in the terminal summary."""
    def record(n, ok, detail):
        _VERDICTS.append((n, f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))
        print(_VERDICTS[-1][1])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
