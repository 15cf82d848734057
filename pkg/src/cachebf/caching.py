"""Centralized cache placement and XOR-coded multicast messages.

Users, files and subfile subsets are 0-indexed.  A t-subset or a (t+1)-subset
of users is a sorted tuple of ints; the j-th subset of a given size is the
j-th element of ``itertools.combinations(range(K), size)``, i.e. subsets are
enumerated in lexicographic order.  Every message index used by the scheduler
and the optimizers refers to this order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import combinations
from math import comb
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DecodeIncompleteError, InputError


@lru_cache(maxsize=None)
def subsets(K: int, size: int) -> tuple[tuple[int, ...], ...]:
    """All ``size``-subsets of range(K) in lexicographic order."""
    return tuple(combinations(range(K), size))


@lru_cache(maxsize=None)
def subset_index(K: int, size: int) -> dict:
    return {s: j for j, s in enumerate(subsets(K, size))}


@dataclass(frozen=True)
class ProblemInstance:
    N: int
    K: int
    M: int
    R: float
    N_T: int
    t: int
    noise_vars: tuple[float, ...]

    @property
    def num_messages(self) -> int:
        return comb(self.K, self.t + 1)

    @property
    def subfile_rate(self) -> float:
        """Rate each coded message must deliver, R / C(K, t)."""
        return self.R / comb(self.K, self.t)

    def with_rate(self, R: float) -> "ProblemInstance":
        return make_instance(self.N, self.K, self.M, R, self.N_T, self.noise_vars)


def make_instance(N, K, M, R, N_T, noise=1.0) -> ProblemInstance:
    """Validate the scenario and derive the caching factor t = M K / N.

    ``noise`` is a scalar variance shared by all users or one variance per user.
    """
    for name, v in (("N", N), ("K", K), ("M", M), ("N_T", N_T)):
        if int(v) != v or v < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v!r}")
    N, K, M, N_T = int(N), int(K), int(M), int(N_T)
    if K < 2:
        raise ConfigError(f"K must be >= 2, got {K}")
    if not np.isfinite(R) or R < 0:
        raise ConfigError(f"file rate R must be a nonnegative real, got {R!r}")
    if N < K:
        raise ConfigError(f"N={N} < K={K}: distinct worst-case demands not representable")
    t = Fraction(M * K, N)
    if t.denominator != 1:
        raise ConfigError(f"caching factor t = M*K/N = {t} is not an integer")
    t = int(t)
    if not 1 <= t <= K - 1:
        raise ConfigError(f"caching factor t = {t} outside 1..K-1={K - 1}")
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (K,))
    if not np.all(np.isfinite(noise)) or np.any(noise <= 0):
        raise ConfigError(f"noise variances must be positive, got {noise.tolist()}")
    return ProblemInstance(N, K, M, float(R), N_T, t, tuple(float(x) for x in noise))


@dataclass(frozen=True)
class MulticastMessage:
    target_set: tuple[int, ...]

    def __post_init__(self):
        ts = tuple(sorted(int(k) for k in self.target_set))
        if len(set(ts)) != len(ts):
            raise InputError(f"repeated user in target set {self.target_set}")
        object.__setattr__(self, "target_set", ts)

    def __contains__(self, k):
        return k in self.target_set

    def __len__(self):
        return len(self.target_set)


@dataclass(frozen=True)
class PlacementMap:
    """``cached[k]`` lists the (file, t-subset index) pairs stored by user k."""
    K: int
    N: int
    t: int
    cached: tuple[tuple[tuple[int, int], ...], ...]

    def holds(self, k: int, file: int, subset_j: int) -> bool:
        return k in subsets(self.K, self.t)[subset_j]

    def to_json(self) -> str:
        return json.dumps({
            "K": self.K, "N": self.N, "t": self.t,
            "subsets": [list(s) for s in subsets(self.K, self.t)],
            "cached": [[list(p) for p in c] for c in self.cached],
        })


def placement(instance: ProblemInstance) -> PlacementMap:
    K, N, t = instance.K, instance.N, instance.t
    cached = []
    for k in range(K):
        cached.append(tuple((i, j) for i in range(N)
                            for j, g in enumerate(subsets(K, t)) if k in g))
    return PlacementMap(K, N, t, tuple(cached))


@dataclass(frozen=True)
class MessageSet:
    """Coded messages for one demand vector.

    ``messages[j]`` targets ``subsets(K, t+1)[j]``.  ``composition[j]`` lists,
    for every user k in the target set, the subfile (d_k, index of G minus k)
    XORed into the message.  ``per_user[k]`` holds the indices of messages
    targeting user k.
    """
    K: int
    t: int
    demand: tuple[int, ...]
    messages: tuple[MulticastMessage, ...]
    composition: tuple[tuple[tuple[int, int], ...], ...]
    per_user: tuple[tuple[int, ...], ...] = field(repr=False)

    def to_json(self) -> str:
        return json.dumps({
            "K": self.K, "t": self.t, "demand": list(self.demand),
            "messages": [list(m.target_set) for m in self.messages],
            "per_user": [list(p) for p in self.per_user],
        })


def message_users(K: int, t: int) -> tuple[tuple[int, ...], ...]:
    """Target sets of all coded messages, in message-index order."""
    return subsets(K, t + 1)


@lru_cache(maxsize=None)
def messages_of_user(K: int, t: int) -> tuple[tuple[int, ...], ...]:
    msgs = subsets(K, t + 1)
    return tuple(tuple(j for j, g in enumerate(msgs) if k in g) for k in range(K))


def coded_messages(instance: ProblemInstance, demand: Sequence[int]) -> MessageSet:
    K, t, N = instance.K, instance.t, instance.N
    demand = tuple(int(d) for d in demand)
    if len(demand) != K:
        raise InputError(f"demand vector has length {len(demand)}, expected {K}")
    bad = [d for d in demand if not 0 <= d < N]
    if bad:
        raise InputError(f"demand indices {bad} outside 0..{N - 1}")
    sub_idx = subset_index(K, t)
    messages, composition = [], []
    for g in subsets(K, t + 1):
        messages.append(MulticastMessage(g))
        composition.append(tuple(
            (demand[k], sub_idx[tuple(u for u in g if u != k)]) for k in g))
    return MessageSet(K, t, demand, tuple(messages), tuple(composition),
                      messages_of_user(K, t))


def random_library(instance: ProblemInstance, subfile_bytes: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Random library as a uint8 array of shape (N, C(K,t), subfile_bytes)."""
    n_sub = comb(instance.K, instance.t)
    return rng.integers(0, 256, size=(instance.N, n_sub, subfile_bytes), dtype=np.uint8)


def encode_messages(library: np.ndarray, msgset: MessageSet) -> dict:
    """XOR payload of every coded message, keyed by target-set tuple."""
    out = {}
    for m, comp in zip(msgset.messages, msgset.composition):
        payload = np.zeros(library.shape[2], dtype=np.uint8)
        for file, j in comp:
            payload ^= library[file, j]
        out[m.target_set] = payload.tobytes()
    return out


def simulate_decode(plc: PlacementMap, demand: Sequence[int],
                    delivered: Mapping[tuple, bytes], library: np.ndarray) -> list[bytes]:
    """Rebuild every user's demanded file from its cache and the delivered payloads.

    Returns the recovered files (subfiles concatenated in t-subset order).
    Raises DecodeIncompleteError if any subfile could not be recovered.
    """
    K, t = plc.K, plc.t
    sub_idx = subset_index(K, t)
    tsubs = subsets(K, t)
    demand = tuple(int(d) for d in demand)
    n_sub, nbytes = library.shape[1], library.shape[2]
    recovered, missing = [], {}
    for k in range(K):
        cache = {p: library[p[0], p[1]] for p in plc.cached[k]}
        parts: list = [None] * n_sub
        for j, g in enumerate(tsubs):
            if k in g:
                parts[j] = cache[(demand[k], j)]
        for g in subsets(K, t + 1):
            if k not in g or g not in delivered:
                continue
            buf = np.frombuffer(delivered[g], dtype=np.uint8).copy()
            if buf.size != nbytes:
                raise InputError(f"payload for {g} has {buf.size} bytes, expected {nbytes}")
            for l in g:
                if l != k:
                    buf ^= cache[(demand[l], sub_idx[tuple(u for u in g if u != l)])]
            parts[sub_idx[tuple(u for u in g if u != k)]] = buf
        lost = [tsubs[j] for j, p in enumerate(parts) if p is None]
        if lost:
            missing[k] = lost
        else:
            recovered.append(b"".join(np.asarray(p, dtype=np.uint8).tobytes() for p in parts))
    if missing:
        raise DecodeIncompleteError(missing)
    return recovered
