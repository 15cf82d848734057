"""Joint optimization of the delivery pattern and the beamformers.

Every message may be sent in every one of B equal-length slots with its own
rate.  The number of messages a user decodes in a slot (the count of nonzero
rates) is capped at s.  The count is replaced by the smooth surrogate
(2/pi) arctan(r / xi) and handled by the same SCA machinery as the fixed
pattern problem.  After convergence small rates are rounded to zero, the
resulting pattern is checked against the hard budget and the beamformers are
re-optimized for it with fixed rates, so the reported power belongs to an
exactly feasible solution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np

from .beamforming import (BeamformingSolution, ChannelRealization, SCAConfig, _Program,
                          _run_sca, sca_solve, sdr_init, zero_forcing_slot)
from .caching import ProblemInstance
from .errors import BudgetViolationError, ConfigError, InitializationError, InputError
from .scheduler import DeliveryPlan, greedy_schedule, incidence


@dataclass(frozen=True)
class SparseConfig:
    """``xi`` and ``eps_rate`` default to 1e-3 and 1e-4 times R/C(K,t)."""
    decode_limit: int
    num_slots: int
    xi: float | None = None
    eps_rate: float | None = None
    sca: SCAConfig = field(default_factory=lambda: SCAConfig(rate_mode="variable", decouple=False))

    def resolved(self, instance: ProblemInstance) -> tuple[float, float]:
        unit = instance.subfile_rate
        xi = 1e-3 * unit if self.xi is None else float(self.xi)
        eps = 1e-4 * unit if self.eps_rate is None else float(self.eps_rate)
        if unit > 0 and (xi <= 0 or eps <= 0):
            raise ConfigError("xi and eps_rate must be positive")
        return xi, eps


@dataclass(eq=False)
class JointResult:
    solution: BeamformingSolution   # certified (fixed-pattern) solution
    plan: DeliveryPlan              # induced plan after rounding
    relaxed_power: float            # objective of the smoothed program at convergence
    census: np.ndarray              # (K, B) exact decode counts of the induced plan
    status: str


def arctan_smooth(r, xi: float):
    """(2/pi) arctan(r/xi): 0 at r = 0, tends to 1 as r grows."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise InputError("rates must be nonnegative")
    if xi <= 0:
        raise InputError("xi must be positive")
    out = (2.0 / math.pi) * np.arctan(r / xi)
    return float(out) if out.ndim == 0 else out


def l0_census(rates: np.ndarray, K: int, t: int, eps_rate: float) -> np.ndarray:
    """counts[k, i] = number of messages for user k whose slot-i rate is >= eps_rate."""
    on = (np.asarray(rates) >= eps_rate).astype(np.int64)
    return incidence(K, t).T @ on


def _initial_rates(instance, init_plan, B):
    """Spread the initial plan over B slots: slot i repeats initial slot i mod B0
    and each message's rate is shared equally by the copies of its slot."""
    B0 = init_plan.num_slots
    if B < B0:
        raise ConfigError(f"B={B} is smaller than the initial plan's {B0} slots")
    copies = np.bincount(np.arange(B) % B0, minlength=B0)
    r = np.zeros((instance.num_messages, B))
    for i in range(B):
        g = i % B0
        r[:, i] = init_plan.rates[:, g] / copies[g]
    return r


def _faint_rate(r, K, t, s, xi):
    """Rate for messages absent from the initial pattern.

    Chosen so the faint messages use at most half of the remaining smooth
    budget of every (user, slot); keeps every beamformer nonzero so SCA can
    grow any message.
    """
    A = incidence(K, t)
    f = arctan_smooth(r, xi)
    used = A.T @ f
    n_off = A.T @ (r == 0)
    slack = s - used
    with np.errstate(divide="ignore", invalid="ignore"):
        per = np.where(n_off > 0, slack / (2 * np.maximum(n_off, 1)), np.inf)
    per = float(np.min(per))
    if not np.isfinite(per):
        return 0.0
    return min(xi * math.tan(math.pi / 2 * min(per, 0.5)), 1e-2 * xi)


def _start_beamformers(channels, K, t, r, fractions):
    B = r.shape[1]
    M = r.shape[0]
    W = np.zeros((B, M, channels.N_T), dtype=complex)
    for i in range(B):
        act = list(range(M))
        try:
            W[i] = zero_forcing_slot(channels, K, t, act, r[:, i], float(fractions[i]))
        except InitializationError:
            p = DeliveryPlan(K, t, 0.0, (tuple(act),), r[:, [i]], np.array([fractions[i]]))
            W[i] = sdr_init(p, channels, 0, 200).W
    return W


def _grow_faint(prog, W0, Wz, off, rates, scale, tol):
    """Add faint streams for the messages a start point does not carry.

    ``Wz`` zero-forces every message towards all users it does not target, so
    the added streams only help their own targets; they are doubled until the
    start point satisfies every constraint (to ``tol``).  Returns None if that fails.
    """
    add = Wz * off.T[:, :, None]
    for c in 2.0 ** np.arange(0, 40):
        W = W0 + c * add
        m, _ = prog.margins([w / math.sqrt(scale) for w in W], rates)
        if m >= -tol:
            return W
    return None


def _round_rates(r, need, eps):
    r = np.where(r < eps, 0.0, r)
    for j in range(r.shape[0]):
        short = need - r[j].sum()
        if short > 0:
            r[j, int(np.argmax(r[j]))] += short
    return r


def solve_joint(channels: ChannelRealization, instance: ProblemInstance, config: SparseConfig,
                init_plan: DeliveryPlan | None = None,
                init_solution: BeamformingSolution | None = None) -> JointResult:
    """Pattern and beamformers for B slots under the decode limit s.

    ``init_plan`` must respect the decode limit and have at most B slots
    (default: the greedy plan for s).  ``init_solution`` optionally supplies
    a feasible starting point with B slots (for example the result for a
    smaller s on the same channels); the returned power is then never
    above that of the start.
    """
    K, t, B, s = instance.K, instance.t, config.num_slots, config.decode_limit
    if channels.K != K:
        raise InputError(f"channels have {channels.K} users, instance has {K}")
    if B < 1 or not 1 <= s <= comb(K - 1, t):
        raise ConfigError(f"need B >= 1 and 1 <= s <= {comb(K - 1, t)}")
    M = instance.num_messages
    fr = np.full(B, 1.0 / B)
    need = instance.subfile_rate
    if instance.R == 0:
        empty = DeliveryPlan(K, t, 0.0, tuple(() for _ in range(B)), np.zeros((M, B)), fr,
                             "joint")
        sol = BeamformingSolution(np.zeros((B, M, channels.N_T), dtype=complex),
                                  np.zeros((M, B)), fr, 0.0, np.zeros(B),
                                  slot_status=["converged"] * B)
        return JointResult(sol, empty, 0.0, np.zeros((K, B), dtype=np.int64), "converged")
    xi, eps = config.resolved(instance)
    if init_solution is not None:
        if init_solution.W.shape[0] != B or not np.allclose(init_solution.fractions, fr):
            raise ConfigError("initial solution needs B equal-length slots")
        r = np.array(init_solution.rates, dtype=float)
        if l0_census(r, K, t, eps).max() > s:
            raise ConfigError("initial solution exceeds the decode limit")
    else:
        init_plan = init_plan or greedy_schedule(instance, s)
        if int(init_plan.decode_counts().max()) > s:
            raise ConfigError("initial plan exceeds the decode limit")
        r = _initial_rates(instance, init_plan, B)
    faint = _faint_rate(r, K, t, s, xi)
    off = r == 0
    r = np.where(off, faint, r)
    if init_solution is not None:
        W0 = np.array(init_solution.W)
    else:
        W0 = _start_beamformers(channels, K, t, r, fr)
    scale = max(float(fr @ (np.abs(W0) ** 2).sum(axis=(1, 2))), 1e-300)
    sig = np.sqrt(channels.noise)
    Hn = channels.H * math.sqrt(scale) / sig[:, None]
    prog = _Program(K, t, channels.N_T, [list(range(M)) for _ in range(B)], fr, Hn,
                    fixed_rates=None, min_rate=need, rate_floor=0.5 * faint, sparsity=(xi, s))
    rl0 = [r[:, i] for i in range(B)]
    if init_solution is not None and off.any():
        W0 = _grow_faint(prog, W0, _start_beamformers(channels, K, t, r, fr), off, rl0, scale,
                         config.sca.feas_tol)
        if W0 is None:  # fall back to the greedy start
            return solve_joint(channels, instance, config, init_plan)
    cfg = config.sca
    W, eta, rl, st, it, trace = _run_sca(prog, [w / math.sqrt(scale) for w in W0], rl0, cfg, -1)
    relaxed = prog.power(W) * scale
    rates = np.stack(rl, axis=1)
    Wj = np.stack(W) * math.sqrt(scale)

    rates = _round_rates(rates, need, eps)
    census = l0_census(rates, K, t, eps)
    if census.max() > s:
        k, i = np.unravel_index(int(np.argmax(census)), census.shape)
        raise BudgetViolationError(int(k), int(i), int(census[k, i]), s)
    slots = tuple(tuple(np.flatnonzero(rates[:, i] > 0).tolist()) for i in range(B))
    plan = DeliveryPlan(K, t, instance.R, slots, rates, fr, label=f"joint(s={s},B={B})")

    # certification: fixed-pattern re-solve from the joint point and from scratch
    on = (rates > 0).T[:, :, None]
    cands = []
    for c in (SCAConfig(init="point", rate_mode="fixed", solver=cfg.solver),
              SCAConfig(init="zf", rate_mode="fixed", solver=cfg.solver)):
        try:
            sol = sca_solve(plan, channels, c, init_point=Wj * on if c.init == "point" else None)
        except InitializationError:
            continue  # rounding broke feasibility of the joint point
        if sol.status != "failed":
            cands.append(sol)
    if not cands:
        sol = sca_solve(plan, channels, SCAConfig(init="sdr", rate_mode="fixed", solver=cfg.solver))
        cands.append(sol)
    best = min(cands, key=lambda x: x.power)
    if init_solution is not None and init_solution.power < best.power:
        # the supplied start already respects the budget; never return worse
        best = replace(init_solution, trace=list(init_solution.trace))
        r0 = np.where(init_solution.rates >= eps, init_solution.rates, 0.0)
        slots = tuple(tuple(np.flatnonzero(r0[:, i] > 0).tolist()) for i in range(B))
        plan = DeliveryPlan(K, t, instance.R, slots, r0, fr, label=plan.label)
        census = l0_census(r0, K, t, eps)
    best.trace = trace + best.trace
    status = best.status if best.status != "converged" else st
    return JointResult(best, plan, relaxed, census, status)
