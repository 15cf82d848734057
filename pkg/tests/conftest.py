import math
import sys

import numpy as np
import pytest

from cachebf.beamforming import ChannelRealization


def rayleigh(K, N_T, rng, noise=1.0):
    H = (rng.standard_normal((K, N_T)) + 1j * rng.standard_normal((K, N_T))) / math.sqrt(2)
    return ChannelRealization(H, np.full(K, noise))


def assert_monotone(solution, tol=1e-9):
    """Objective trace of every SCA run is non-increasing (relative tol)."""
    by_run = {}
    for slot, it, obj, _ in solution.trace:
        by_run.setdefault(slot, []).append((it, obj))
    for run in by_run.values():
        objs = [o for _, o in sorted(run) if _ >= 0]
        for a, b in zip(objs, objs[1:]):
            assert b <= a * (1 + tol) + 1e-300, (a, b)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
