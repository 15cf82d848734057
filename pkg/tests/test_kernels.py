import os
import subprocess
import sys

import numpy as np
import pytest

from cachebf import _kernels
from cachebf.scheduler import greedy_partition, incidence


@pytest.mark.parametrize("K,t,s", [(4, 1, 1), (4, 1, 2), (5, 1, 1), (5, 1, 2), (5, 2, 3), (6, 2, 4)])
def test_exact_compiled_matches_plain(K, t, s):
    A = incidence(K, t)
    bound = len(greedy_partition(K, t, s)) + 1
    b1, a1 = _kernels.exact_min_slots(A, s, bound)
    b2, a2 = _kernels.exact_min_slots_py(A, s, bound)
    assert b1 == b2
    assert np.array_equal(a1, a2)
    # witness respects the decode limit
    for b in range(b1):
        assert A[a1 == b].sum(axis=0).max() <= s


def test_sinr_sums_agree():
    rng = np.random.default_rng(0)
    A = incidence(5, 1)
    M = A.shape[0]
    G = rng.exponential(size=(5, M))
    users = rng.integers(0, 5, size=50)
    mask = (rng.random((50, M)) < 0.4).astype(np.int64) * A[:, users].T
    noise = rng.uniform(0.5, 2.0, size=5)
    a = _kernels.sinr_sums(G, A, noise, users, mask)
    b = _kernels.sinr_sums_np(G, A, noise, users, mask)
    c = _kernels._sinr_sums_py(G, A, noise, users, mask)
    assert np.allclose(a, b, rtol=1e-12) and np.allclose(b, c, rtol=1e-12)


def test_min_power_single_agree():
    rng = np.random.default_rng(1)
    gains = rng.exponential(size=(40, 4))
    gains[3, 1] = 0.0
    th = np.array([1.0, 0.5, 0.0])
    users = np.array([0, 1, 2])
    noise = np.ones(4)
    a = _kernels.min_power_single(gains, th, noise, users)
    b = _kernels.min_power_single_np(gains, th, noise, users)
    assert np.isinf(a[3]) and np.isinf(b[3])
    fin = np.isfinite(a)
    assert np.allclose(a[fin], b[fin], rtol=1e-12)
    assert np.allclose(a[fin], np.maximum(1.0 / gains[fin, 0], 0.5 / gains[fin, 1]))


def test_env_flag_selects_plain_path():
    code = ("from cachebf import _kernels as k; from cachebf.scheduler import min_slots_exact;"
            "print(k.NUMBA_ENABLED, min_slots_exact((5, 1), 2)[0])")
    env = dict(os.environ, CACHEBF_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.split() == ["False", "2"]
