import sys

import numpy as np
import pytest


def random_spd(rng, n, cond=50.0):
    """Seeded SPD matrix with eigenvalues spread over [1, cond] (x 1e-3)."""
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    ev = np.geomspace(1.0, cond, n) * 1e-3
    S = (Q * ev) @ Q.T
    return 0.5 * (S + S.T)


def factor_returns(rng, T, N, mean=0.006, K=1):
    F = rng.normal(0.005, 0.04, (T, K))
    loadings = rng.uniform(0.5, 1.5, (K, N))
    R = mean + F @ loadings + rng.normal(0, 0.03, (T, N))
    return R, F


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
