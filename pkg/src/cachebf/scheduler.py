"""Delivery planning: split the coded messages over orthogonal time slots.

A plan assigns every coded message (indexed as in :mod:`cachebf.caching`) a
rate in each slot; a slot "carries" a message when that rate is positive.
The greedy scheduler keeps the number of messages any user must decode in a
slot at or below a decode limit ``s`` and tries to use few slots.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from math import ceil, comb, factorial
from typing import Sequence

import numpy as np

from . import _kernels
from .caching import ProblemInstance, message_users, messages_of_user, subsets
from .errors import ConfigError, InputError, InstanceTooLargeError, InvalidBaselineError

PLAN_FORMAT_VERSION = 1
EXACT_MAX_MESSAGES = 30
TIE_BREAKS = ("fit", "lex")


def incidence(K: int, t: int) -> np.ndarray:
    """(C(K,t+1), K) 0/1 matrix, row j marks the users targeted by message j."""
    msgs = message_users(K, t)
    A = np.zeros((len(msgs), K), dtype=np.int64)
    for j, g in enumerate(msgs):
        A[j, list(g)] = 1
    return A


@dataclass(frozen=True, eq=False)
class DeliveryPlan:
    """Messages per slot, per-(message, slot) rates and blocklength fractions.

    ``rates[j, i]`` is R^T(i) in bits per channel use of the whole block for
    message j in slot i; ``fractions[i]`` is n_i / n.
    """
    K: int
    t: int
    R: float
    slots: tuple[tuple[int, ...], ...]
    rates: np.ndarray
    fractions: np.ndarray
    label: str = field(default="", compare=False)

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float)
        fr = np.array(self.fractions, dtype=float)
        rates.setflags(write=False)
        fr.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "fractions", fr)
        nm = comb(self.K, self.t + 1)
        if rates.shape != (nm, len(self.slots)) or fr.shape != (len(self.slots),):
            raise InputError("plan arrays inconsistent with the slot list")
        for i, sl in enumerate(self.slots):
            on = set(np.flatnonzero(rates[:, i] > 0).tolist())
            if not on <= set(sl):
                raise InputError(f"slot {i}: positive rate on messages outside the slot")

    @property
    def num_slots(self) -> int:
        return len(self.slots)

    @property
    def num_messages(self) -> int:
        return comb(self.K, self.t + 1)

    def indicator(self) -> np.ndarray:
        """v[j, i] = 1 when slot i carries message j."""
        v = np.zeros((self.num_messages, self.num_slots), dtype=np.int64)
        for i, sl in enumerate(self.slots):
            v[list(sl), i] = 1
        return v

    def decode_counts(self) -> np.ndarray:
        """c[k, i] = number of messages user k decodes in slot i."""
        return incidence(self.K, self.t).T @ self.indicator()

    def message_targets(self, j: int) -> tuple[int, ...]:
        return message_users(self.K, self.t)[j]

    def check(self, tol: float = 1e-12) -> None:
        """Raise InputError if a plan invariant fails."""
        if abs(self.fractions.sum() - 1.0) > tol or np.any(self.fractions < 0):
            raise InputError(f"blocklength fractions {self.fractions} do not sum to 1")
        need = self.R / comb(self.K, self.t)
        short = np.flatnonzero(self.rates.sum(axis=1) < need * (1 - 1e-12) - 1e-15)
        if short.size:
            raise InputError(f"messages {short.tolist()} get less than R/C(K,t)")

    def to_json(self) -> str:
        msgs = message_users(self.K, self.t)
        trip = [[int(j), int(i), float(self.rates[j, i])]
                for i in range(self.num_slots) for j in self.slots[i]]
        return json.dumps({
            "version": PLAN_FORMAT_VERSION, "K": self.K, "t": self.t, "R": self.R,
            "label": self.label,
            "messages": [list(g) for g in msgs],
            "slots": [[list(msgs[j]) for j in sl] for sl in self.slots],
            "rates": trip,
            "fractions": [float(x) for x in self.fractions],
        })

    @classmethod
    def from_json(cls, text: str) -> "DeliveryPlan":
        d = json.loads(text)
        if d.get("version") != PLAN_FORMAT_VERSION:
            raise InputError(f"unsupported plan format version {d.get('version')!r}")
        K, t = int(d["K"]), int(d["t"])
        index = {g: j for j, g in enumerate(message_users(K, t))}
        slots = tuple(tuple(sorted(index[tuple(m)] for m in sl)) for sl in d["slots"])
        rates = np.zeros((comb(K, t + 1), len(slots)))
        for j, i, r in d["rates"]:
            rates[int(j), int(i)] = r
        return cls(K, t, float(d["R"]), slots, rates, np.asarray(d["fractions"]),
                   d.get("label", ""))


@dataclass(frozen=True)
class ScheduleConfig:
    """Greedy scheduler settings.

    tie_break picks one target set among the candidates with the largest
    overlap with the least-loaded users:
      "fit"  the lexicographically smallest one that still fits the decode
             limit, falling back to the smallest overall (default)
      "lex"  the lexicographically smallest one
    Both are instances of the same argmax; "fit" avoids closing a slot while
    an equally good candidate would still fit.  continue_scan=False keeps the
    literal behaviour of closing a slot as soon as the chosen candidate does
    not fit; True keeps scanning.
    """
    decode_limit: int
    continue_scan: bool = False
    tie_break: str = "fit"

    def validate(self, K: int, t: int) -> None:
        smax = comb(K - 1, t)
        if not 1 <= self.decode_limit <= smax:
            raise ConfigError(f"decode limit s={self.decode_limit} outside 1..{smax}")
        if self.tie_break not in TIE_BREAKS:
            raise ConfigError(f"unknown tie-break rule {self.tie_break!r}")


def _as_config(config) -> ScheduleConfig:
    return config if isinstance(config, ScheduleConfig) else ScheduleConfig(int(config))


def plan_from_partition(K: int, t: int, R: float, slots: Sequence[Sequence[int]],
                        label: str = "") -> DeliveryPlan:
    """Disjoint partition -> plan with rate R/C(K,t) on the carrying slot and
    blocklengths proportional to slot sizes."""
    nm = comb(K, t + 1)
    slots = tuple(tuple(sorted(int(j) for j in sl)) for sl in slots)
    rates = np.zeros((nm, len(slots)))
    for i, sl in enumerate(slots):
        rates[list(sl), i] = R / comb(K, t)
    fractions = np.array([len(sl) for sl in slots], dtype=float) / nm
    return DeliveryPlan(K, t, float(R), slots, rates, fractions, label)


def greedy_partition(K: int, t: int, s: int, continue_scan: bool = False,
                     tie_break: str = "fit") -> list[list[int]]:
    if tie_break not in TIE_BREAKS:
        raise ConfigError(f"unknown tie-break rule {tie_break!r}")
    A = incidence(K, t)
    remaining = list(range(A.shape[0]))
    slots = []
    while remaining:
        c = np.zeros(K, dtype=np.int64)
        chosen, cand = [], list(remaining)
        while cand:
            least = (c == c.min()).astype(np.int64)
            overlap = A[cand] @ least
            best = overlap == overlap.max()
            pos = int(np.argmax(best))  # first max = lexicographically smallest
            if tie_break == "fit":
                fits = best & np.all((A[cand] * (c + 1)) <= s, axis=1)
                if fits.any():
                    pos = int(np.argmax(fits))
            j = cand.pop(pos)
            if np.all(c[A[j] == 1] + 1 <= s):
                c += A[j]
                chosen.append(j)
            elif not continue_scan:
                break
        slots.append(sorted(chosen))
        taken = set(chosen)
        remaining = [j for j in remaining if j not in taken]
    return slots


def greedy_schedule(instance: ProblemInstance, config) -> DeliveryPlan:
    cfg = _as_config(config)
    cfg.validate(instance.K, instance.t)
    slots = greedy_partition(instance.K, instance.t, cfg.decode_limit, cfg.continue_scan,
                             cfg.tie_break)
    return plan_from_partition(instance.K, instance.t, instance.R, slots,
                               label=f"greedy(s={cfg.decode_limit})")


def full_superposition(instance: ProblemInstance) -> DeliveryPlan:
    return plan_from_partition(instance.K, instance.t, instance.R,
                               [list(range(instance.num_messages))], label="FS")


def min_slots_exact(instance_or_Kt, s: int, L: int | None = None):
    """Smallest number of slots over all partitions respecting the decode limit.

    Returns (B, slots).  Accepts a ProblemInstance or a (K, t) pair.
    """
    if isinstance(instance_or_Kt, ProblemInstance):
        K, t = instance_or_Kt.K, instance_or_Kt.t
    else:
        K, t = instance_or_Kt
    nm = comb(K, t + 1)
    if nm > EXACT_MAX_MESSAGES:
        raise InstanceTooLargeError(
            f"C(K,t+1)={nm} messages exceeds the exact-search guard {EXACT_MAX_MESSAGES}")
    if not 1 <= s <= comb(K - 1, t):
        raise ConfigError(f"decode limit s={s} outside 1..{comb(K - 1, t)}")
    L = nm if L is None else int(L)
    A = incidence(K, t)
    greedy = greedy_partition(K, t, s)
    # greedy B + 1 as the initial incumbent bound so the search returns a witness
    bound = min(L, len(greedy)) + 1
    best, assign = _kernels.exact_min_slots(A, int(s), int(bound))
    if best >= bound:
        if len(greedy) <= L:
            return len(greedy), greedy
        raise InputError(f"no partition with at most L={L} slots")
    slots = [sorted(np.flatnonzero(assign == b).tolist()) for b in range(best)]
    return best, slots


def slots_upper_bound(K: int, t: int, s: int) -> int:
    if not 1 <= s <= comb(K - 1, t):
        raise ConfigError(f"decode limit s={s} outside 1..{comb(K - 1, t)}")
    first = ceil(Fraction(comb(K, t + 1), s * (K // (t + 1))))
    if s == 1:
        return first
    return min(first, ceil(Fraction(comb(K - 1, t), s - 1)) + 1)


def baseline_slot_count(K: int, t: int, alpha: int, beta: int) -> int:
    if (t + alpha) % (t + beta):
        raise InvalidBaselineError(f"t+alpha={t + alpha} not divisible by t+beta={t + beta}")
    delta = (t + alpha) // (t + beta)
    num = comb(K, t + alpha) * factorial(t + alpha)
    den = factorial(delta) * factorial(t + beta) ** delta
    return num // den


def baseline_plan(instance: ProblemInstance, alpha: int) -> DeliveryPlan:
    """Baseline scheme with beta = alpha: one slot per (t+alpha)-user group."""
    K, t = instance.K, instance.t
    if alpha < 1 or t + alpha > K:
        raise InvalidBaselineError(f"alpha={alpha} needs 1 <= alpha <= K-t={K - t}")
    index = {g: j for j, g in enumerate(message_users(K, t))}
    groups = subsets(K, t + alpha)
    splits = comb(K - t - 1, alpha - 1)
    rate = instance.R / (comb(K, t) * splits)
    slots, rates = [], np.zeros((instance.num_messages, len(groups)))
    for i, g in enumerate(groups):
        sl = sorted(index[m] for m in combinations(g, t + 1))
        slots.append(tuple(sl))
        rates[sl, i] = rate
    fractions = np.full(len(groups), 1.0 / len(groups))
    return DeliveryPlan(K, t, instance.R, tuple(slots), rates, fractions,
                        label=f"baseline(alpha={alpha})")


def dof_lower_bound(K: int, t: int, s: int) -> Fraction:
    return Fraction(comb(K, t), s * slots_upper_bound(K, t, s))


def dof_of_plan(plan: DeliveryPlan, s: int) -> Fraction:
    return Fraction(comb(plan.K, plan.t), s * plan.num_slots)


def constraint_census(plan: DeliveryPlan, s: int | None = None) -> dict:
    """Number of rate-region constraints sum_k (2^{c_k(i)} - 1) per slot."""
    c = plan.decode_counts()
    per_slot = [int(x) for x in ((2 ** c) - 1).sum(axis=0)]
    out = {"per_slot": per_slot, "total": int(sum(per_slot)), "num_slots": plan.num_slots}
    if s is not None:
        out["max_decode"] = int(c.max()) if c.size else 0
        out["within_limit"] = bool(c.max() <= s) if c.size else True
    return out


def user_message_sets(K: int, t: int):
    return messages_of_user(K, t)
