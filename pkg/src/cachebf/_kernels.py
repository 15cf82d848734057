"""Hot inner loops, compiled with numba when available.

Set ``CACHEBF_NUMBA=0`` before import to run the plain Python/numpy versions
(useful for debugging and for the benchmark in ``benchmarks/``).  Both paths
run the same source; the compiled one is produced by ``numba.njit``.
"""
from __future__ import annotations

import os

import numpy as np

_want = os.environ.get("CACHEBF_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")
try:
    if not _want:
        raise ImportError
    import numba

    def _jit(fn):
        return numba.njit(cache=True)(fn)

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - exercised with CACHEBF_NUMBA=0
    def _jit(fn):
        return fn

    NUMBA_ENABLED = False


def _exact_min_slots_py(A, s, bound):
    """Depth-first branch and bound over message -> slot assignments.

    Messages are placed in index order; a message may join any open slot or
    open the next one (slot symmetry broken by opening slots in order).  A
    node is pruned when a per-user capacity bound shows it cannot finish in
    fewer than ``bound`` slots.  Returns (best, assign); best == bound means
    nothing better than ``bound`` exists.
    """
    m, K = A.shape
    rem = np.zeros((m + 1, K), dtype=np.int64)
    for p in range(m - 1, -1, -1):
        for k in range(K):
            rem[p, k] = rem[p + 1, k] + A[p, k]
    loads = np.zeros((m, K), dtype=np.int64)
    assign = -np.ones(m, dtype=np.int64)
    best_assign = -np.ones(m, dtype=np.int64)
    choice = np.zeros(m + 1, dtype=np.int64)
    used_at = np.zeros(m + 1, dtype=np.int64)
    best = bound
    p = 0
    while p >= 0:
        if p == m:
            if used_at[m] < best:
                best = used_at[m]
                for q in range(m):
                    best_assign[q] = assign[q]
            p -= 1
            continue
        if assign[p] >= 0:
            b0 = assign[p]
            for k in range(K):
                loads[b0, k] -= A[p, k]
            assign[p] = -1
        used = used_at[p]
        b = choice[p]
        advanced = False
        while b <= used:
            if b == used and used + 1 >= best:
                break
            ok = True
            for k in range(K):
                if A[p, k] == 1 and loads[b, k] + 1 > s:
                    ok = False
                    break
            if ok:
                for k in range(K):
                    loads[b, k] += A[p, k]
                assign[p] = b
                nused = used + 1 if b == used else used
                # capacity lower bound for the remaining messages
                lb = nused
                for k in range(K):
                    cap = 0
                    for bb in range(nused):
                        cap += s - loads[bb, k]
                    need = rem[p + 1, k] - cap
                    if need > 0:
                        extra = nused + (need + s - 1) // s
                        if extra > lb:
                            lb = extra
                if lb < best:
                    choice[p] = b + 1
                    used_at[p + 1] = nused
                    choice[p + 1] = 0
                    p += 1
                    advanced = True
                    break
                for k in range(K):
                    loads[b, k] -= A[p, k]
                assign[p] = -1
            b += 1
        if not advanced:
            choice[p] = 0
            p -= 1
    return best, best_assign


def _sinr_sums_py(G, A, noise, desc_user, desc_mask):
    """Sum of SINRs over each descriptor's message subset.

    G[k, j] = |h_k^H w_j|^2, A[j, k] = 1 when message j targets user k,
    desc_mask[d, j] = 1 when message j belongs to descriptor d.
    """
    K, M = G.shape
    interf = np.empty(K)
    for k in range(K):
        acc = noise[k]
        for j in range(M):
            if A[j, k] == 0:
                acc += G[k, j]
        interf[k] = acc
    D = desc_user.shape[0]
    out = np.zeros(D)
    for d in range(D):
        k = desc_user[d]
        acc = 0.0
        for j in range(M):
            if desc_mask[d, j]:
                acc += G[k, j]
        out[d] = acc / interf[k]
    return out


def _sinr_sums_np(G, A, noise, desc_user, desc_mask):
    interf = (G * (1 - A.T)).sum(axis=1) + noise
    return (desc_mask * G[desc_user]).sum(axis=1) / interf[desc_user]


def _min_power_single_py(gains, thresholds, noise, desc_user):
    """Closed-form power of each candidate direction serving one message.

    gains[c, k] = |h_k^H d_c|^2 for unit-norm candidate c; every descriptor
    d asks gains * p >= thresholds[d] * noise[user].  Returns p per candidate
    (inf where some targeted user gets zero gain).
    """
    C = gains.shape[0]
    D = thresholds.shape[0]
    out = np.zeros(C)
    for c in range(C):
        p = 0.0
        for d in range(D):
            g = gains[c, desc_user[d]]
            need = thresholds[d] * noise[desc_user[d]]
            if need > 0:
                if g <= 0:
                    p = np.inf
                    break
                if need / g > p:
                    p = need / g
        out[c] = p
    return out


def _min_power_single_np(gains, thresholds, noise, desc_user):
    need = thresholds * noise[desc_user]
    g = gains[:, desc_user]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(need > 0, need / g, 0.0)
    ratio[np.isnan(ratio)] = np.inf
    return ratio.max(axis=1) if ratio.shape[1] else np.zeros(gains.shape[0])


exact_min_slots_py = _exact_min_slots_py
exact_min_slots = _jit(_exact_min_slots_py)

if NUMBA_ENABLED:
    sinr_sums = _jit(_sinr_sums_py)
    min_power_single = _jit(_min_power_single_py)
else:
    sinr_sums = _sinr_sums_np
    min_power_single = _min_power_single_np

sinr_sums_np = _sinr_sums_np
min_power_single_np = _min_power_single_np
