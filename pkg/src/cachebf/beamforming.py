"""Minimum average-power beamforming for a delivery plan.

For every slot i and user k, the messages of slot i that target k must lie in
the user's multiple-access rate region:

    sum_{T in pi} R^T(i) <= (n_i/n) log2(1 + sum_{T in pi} gamma_k^T(i))

for every non-empty subset pi of those messages, where gamma is the SINR with
interference from the slot's messages that do not target k.  The program is
non-convex; it is solved by successive convex approximation (SCA) with an
auxiliary SINR-sum variable eta per subset and a first-order inner
approximation of the quadratic-over-linear term.

Internally channels are divided by the noise standard deviation and powers
are expressed relative to the initial point, so every subproblem is solved in
units where sigma = 1 and the starting objective is 1.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .caching import message_users
from .conic import LN2, ConicProgram, Tolerances, solve, svec_index
from .errors import InitializationError, InputError, SlotInfeasibleError
from .scheduler import DeliveryPlan

# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Row k of ``H`` is h_k (length N_T); the received signal is h_k^H x."""
    H: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=complex)
        if H.ndim != 2:
            raise InputError("H must be a (K, N_T) array")
        noise = np.broadcast_to(np.asarray(self.noise, dtype=float), (H.shape[0],)).copy()
        if not np.all(np.isfinite(H)):
            raise InputError("channel entries must be finite")
        if np.any(np.abs(H).max(axis=1) == 0):
            raise InputError("every user needs a nonzero channel")
        if np.any(noise <= 0) or not np.all(np.isfinite(noise)):
            raise InputError("noise variances must be positive")
        H.setflags(write=False)
        noise.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "noise", noise)

    @property
    def K(self) -> int:
        return self.H.shape[0]

    @property
    def N_T(self) -> int:
        return self.H.shape[1]

    def scaled(self, c: float) -> "ChannelRealization":
        return ChannelRealization(self.H * c, self.noise * c * c)

    def to_json(self) -> str:
        return json.dumps({"re": self.H.real.tolist(), "im": self.H.imag.tolist(),
                           "noise": self.noise.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ChannelRealization":
        d = json.loads(text)
        return cls(np.asarray(d["re"]) + 1j * np.asarray(d["im"]), np.asarray(d["noise"]))


@dataclass(frozen=True)
class SCAConfig:
    """SCA controls.

    ``init`` is "zf", "sdr" or "point" (then pass ``init_point`` to sca_solve).
    ``rate_mode`` "fixed" keeps the plan's rates; "variable" optimizes the
    per-slot rates of the active messages jointly with the beamformers.
    """
    step: float = 1.0
    max_iter: int = 200
    rel_tol: float = 1e-6
    patience: int = 3
    feas_tol: float = 1e-7
    init: str = "zf"
    randomizations: int = 1000
    rate_mode: str = "fixed"
    decouple: bool = True
    seed: int = 0
    solver: Tolerances = field(default_factory=lambda: Tolerances(1e-9, 1e-9, 200))

    def __post_init__(self):
        if not 0 < self.step <= 1:
            raise InputError(f"step size must lie in (0, 1], got {self.step}")
        if self.rel_tol <= 0 or self.feas_tol <= 0 or self.max_iter < 1 or self.patience < 1:
            raise InputError("SCA thresholds must be positive")
        if self.init not in ("zf", "sdr", "point"):
            raise InputError(f"unknown init mode {self.init!r}")
        if self.rate_mode not in ("fixed", "variable"):
            raise InputError(f"unknown rate mode {self.rate_mode!r}")


@dataclass(frozen=True)
class MacDescriptor:
    """One rate-region inequality: messages (global indices) decoded by
    ``user`` in ``slot`` with their summed rate and the slot's fraction."""
    slot: int
    user: int
    messages: tuple[int, ...]
    rate_sum: float
    fraction: float


@dataclass(eq=False)
class BeamformingSolution:
    """Beamformers ``W[i, j]`` (slot i, message j; zero when unused), per
    (message, slot) rates, blocklength fractions and the weighted power."""
    W: np.ndarray
    rates: np.ndarray
    fractions: np.ndarray
    power: float
    slot_power: np.ndarray
    eta: dict = field(default_factory=dict)
    status: str = "converged"
    iterations: int = 0
    trace: list = field(default_factory=list)
    slot_status: list = field(default_factory=list)

    @property
    def power_dbw(self) -> float:
        return to_dbw(self.power)

    def to_json(self) -> str:
        return json.dumps({
            "re": self.W.real.tolist(), "im": self.W.imag.tolist(),
            "rates": self.rates.tolist(), "fractions": self.fractions.tolist(),
            "power": self.power, "slot_power": self.slot_power.tolist(),
            "status": self.status, "iterations": self.iterations,
        })

    def trace_csv(self) -> str:
        lines = ["slot,iteration,objective,worst_margin"]
        lines += [f"{s},{it},{obj!r},{m!r}" for s, it, obj, m in self.trace]
        return "\n".join(lines) + "\n"


def to_dbw(p: float) -> float:
    return 10.0 * math.log10(p) if p > 0 else -math.inf


def from_dbw(x: float) -> float:
    return 10.0 ** (x / 10.0)


# ---------------------------------------------------------------------------
# SINR and rate-region bookkeeping


def _targets(K, t):
    A = np.zeros((comb(K, t + 1), K), dtype=np.int64)
    for j, g in enumerate(message_users(K, t)):
        A[j, list(g)] = 1
    return A


def sinr(W_slot: np.ndarray, channels: ChannelRealization, k: int, T: int, t: int) -> float:
    """SINR of message T at user k; ``W_slot[j]`` is message j's beamformer.

    Interference only counts messages that do not target k.
    """
    K = channels.K
    users = message_users(K, t)
    if k not in users[T]:
        raise InputError(f"message {users[T]} does not target user {k}")
    g = np.abs(W_slot.conj() @ channels.H[k]) ** 2  # |h_k^H w_j|^2
    interf = sum(g[j] for j, u in enumerate(users) if k not in u)
    return float(g[T] / (interf + channels.noise[k]))


def _subset_masks(c: int):
    """Non-empty subsets of c items as bit masks 1..2^c-1 (bit b = item b)."""
    return range(1, 1 << c)


def mac_constraint_set(plan: DeliveryPlan, k: int, i: int) -> list[MacDescriptor]:
    """Rate-region inequalities of user k in slot i.

    The active targeted messages (slot messages containing k, sorted by index)
    are enumerated by bit masks 1 .. 2^c - 1.
    """
    users = message_users(plan.K, plan.t)
    mine = [j for j in plan.slots[i] if k in users[j]]
    f = float(plan.fractions[i])
    out = []
    for mask in _subset_masks(len(mine)):
        members = tuple(mine[b] for b in range(len(mine)) if mask >> b & 1)
        out.append(MacDescriptor(i, k, members, float(sum(plan.rates[j, i] for j in members)), f))
    return out


def average_power(solution_or_W, plan_or_fractions) -> float:
    """sum_i (n_i/n) sum_T ||w_T(i)||^2."""
    W = solution_or_W.W if isinstance(solution_or_W, BeamformingSolution) else np.asarray(solution_or_W)
    fr = plan_or_fractions.fractions if isinstance(plan_or_fractions, DeliveryPlan) \
        else np.asarray(plan_or_fractions, dtype=float)
    per_slot = (np.abs(W) ** 2).sum(axis=(1, 2))
    return float(fr @ per_slot)


# ---------------------------------------------------------------------------
# feasibility


@dataclass
class FeasibilityReport:
    feasible: bool
    worst: dict
    violated: list

    def __bool__(self):
        return self.feasible


def _slot_descriptors(K, t, act, rates_col, fraction, slot, A=None):
    """Descriptors of one slot restricted to ``act`` (global message ids)."""
    A = _targets(K, t) if A is None else A
    out = []
    for k in range(K):
        mine = [j for j in act if A[j, k]]
        for mask in _subset_masks(len(mine)):
            members = tuple(mine[b] for b in range(len(mine)) if mask >> b & 1)
            out.append(MacDescriptor(slot, k, members,
                                     float(sum(rates_col[j] for j in members)), fraction))
    return out


def verify_feasibility(solution: BeamformingSolution, plan: DeliveryPlan,
                       channels: ChannelRealization, tol: float = 1e-6) -> FeasibilityReport:
    """Recompute every constraint family from the raw beamformers and rates.

    Margins (>= 0 when satisfied):
      mac       (n_i/n) log2(1 + SINR sum) - rate sum, per descriptor (bits)
      rate_sum  sum_i R^T(i) - R / C(K, t), per message
      rate_nonneg  R^T(i)
      scheme    -||w_T(i)||^2 and -R^T(i) for messages a slot does not carry
    """
    K, t = plan.K, plan.t
    A = _targets(K, t)
    W, rates, fr = solution.W, solution.rates, solution.fractions
    v = plan.indicator()
    worst = {"mac": math.inf, "rate_sum": math.inf, "rate_nonneg": math.inf, "scheme": math.inf}
    violated = []
    for i in range(plan.num_slots):
        act = [j for j in range(A.shape[0]) if np.any(W[i, j] != 0) or rates[j, i] > 0]
        descs = _slot_descriptors(K, t, act, rates[:, i], float(fr[i]), i, A)
        if not descs:
            continue
        G = np.abs(channels.H.conj() @ W[i].T) ** 2  # (K, M)
        mask = np.zeros((len(descs), A.shape[0]), dtype=np.int64)
        for d, dd in enumerate(descs):
            mask[d, list(dd.messages)] = 1
        users = np.array([dd.user for dd in descs], dtype=np.int64)
        eta = _kernels.sinr_sums(G, A, np.asarray(channels.noise, dtype=float), users, mask)
        for dd, e in zip(descs, eta):
            m = dd.fraction * math.log2(1.0 + e) - dd.rate_sum
            worst["mac"] = min(worst["mac"], m)
            if m < -tol:
                violated.append(("mac", dd, m))
    need = plan.R / comb(K, t)
    for j in range(A.shape[0]):
        m = float(rates[j].sum() - need)
        worst["rate_sum"] = min(worst["rate_sum"], m)
        if m < -tol:
            violated.append(("rate_sum", j, m))
    mn = float(rates.min()) if rates.size else 0.0
    worst["rate_nonneg"] = mn
    if mn < -tol:
        violated.append(("rate_nonneg", int(np.argmin(rates.min(axis=1))), mn))
    off = v == 0
    w_off = (np.abs(W) ** 2).sum(axis=2).T[off]
    r_off = rates[off]
    sm = -max(float(w_off.max(initial=0.0)), float(r_off.max(initial=0.0)))
    worst["scheme"] = sm
    if sm < -tol:
        violated.append(("scheme", None, sm))
    worst = {k: (0.0 if math.isinf(x) else x) for k, x in worst.items()}
    return FeasibilityReport(not violated, worst, violated)


# ---------------------------------------------------------------------------
# zero-forcing initialization


def _sinr_targets(rates_col, fraction, act, A, K):
    """Per (user, message) SINR targets that satisfy every subset inequality
    when interference is absent: split 2^{X_k} - 1 in proportion to rates."""
    tgt = {}
    for k in range(K):
        mine = [j for j in act if A[j, k]]
        tot = sum(rates_col[j] for j in mine)
        if tot <= 0:
            continue
        full = 2.0 ** (tot / fraction) - 1.0
        for j in mine:
            tgt[(k, j)] = full * rates_col[j] / tot
    return tgt


def _null_basis(Hz: np.ndarray, N_T: int, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of {w : h_z^H w = 0 for all rows h_z of Hz}."""
    if Hz.shape[0] == 0:
        return np.eye(N_T, dtype=complex)
    U, S, Vh = np.linalg.svd(Hz.conj(), full_matrices=True)
    rank = int(np.sum(S > rtol * S.max()))
    return Vh[rank:].conj().T


def zero_forcing_slot(channels: ChannelRealization, K: int, t: int, act, rates_col,
                      fraction: float, A=None) -> np.ndarray:
    """Feasible beamformers for one slot; rows follow ``act``.

    Each message is steered inside the null space of the channels of the
    slot's served users it does not target, so no user sees interference and
    each beamformer is scaled in closed form.
    """
    A = _targets(K, t) if A is None else A
    H, noise = channels.H, channels.noise
    act = [j for j in act if rates_col[j] > 0]
    served = sorted({k for j in act for k in range(K) if A[j, k]})
    tgt = _sinr_targets(rates_col, fraction, act, A, K)
    out = {}
    for j in act:
        tg = [k for k in range(K) if A[j, k]]
        null_users = [k for k in served if not A[j, k]]
        V = _null_basis(H[null_users], channels.N_T)
        if V.shape[1] == 0:
            raise InitializationError(
                f"no zero-forcing direction for message {tuple(tg)}: "
                f"{len(null_users)} users to null with N_T={channels.N_T}")
        eff = V.conj().T @ H[tg].T  # (dim, |T|): projected channels
        norms = np.linalg.norm(eff, axis=0)
        if np.any(norms <= 1e-10 * np.linalg.norm(H[tg], axis=1)):
            raise InitializationError(f"degenerate projected channel for message {tuple(tg)}")
        d = V @ (eff / norms).sum(axis=1)
        if np.linalg.norm(d) <= 1e-12:
            d = V @ eff[:, 0]
        d = d / np.linalg.norm(d)
        gains = np.abs(H[tg].conj() @ d) ** 2
        p = max(tgt[(k, j)] * noise[k] / g for k, g in zip(tg, gains))
        out[j] = math.sqrt(p) * d
    W = np.zeros((A.shape[0], channels.N_T), dtype=complex)
    for j, w in out.items():
        W[j] = w
    return W


def zero_forcing_init(plan: DeliveryPlan, channels: ChannelRealization,
                      rates: np.ndarray | None = None) -> np.ndarray:
    """Zero-forcing beamformers for every slot, shape (B, C(K,t+1), N_T)."""
    rates = plan.rates if rates is None else np.asarray(rates)
    A = _targets(plan.K, plan.t)
    return np.stack([zero_forcing_slot(channels, plan.K, plan.t, plan.slots[i], rates[:, i],
                                       float(plan.fractions[i]), A)
                     for i in range(plan.num_slots)])


# ---------------------------------------------------------------------------
# semidefinite relaxation with Gaussian randomization


@dataclass
class SDRResult:
    W: np.ndarray          # (C(K,t+1), N_T), rows of messages not in the slot are 0
    power: float           # sum ||w||^2 of the returned beamformers
    lower_bound: float     # optimal value of the relaxation
    rank_one: bool
    candidates_tried: int


def _real_gain_rows(h: np.ndarray):
    """Interleaved real vectors g, g' with h^H w = g.x + j g'.x."""
    g = np.empty(2 * h.size)
    gp = np.empty(2 * h.size)
    g[0::2], g[1::2] = h.real, h.imag
    gp[0::2], gp[1::2] = -h.imag, h.real
    return g, gp


def _complex_from_lift(X: np.ndarray) -> np.ndarray:
    """Hermitian W from a real lifted 2N x 2N matrix (interleaved re/im)."""
    re = X[0::2, 0::2] + X[1::2, 1::2]
    im = X[1::2, 0::2] - X[0::2, 1::2]
    W = re + 1j * im
    return (W + W.conj().T) / 2


def _lp_powers(gains, descs_local, interf_local, thresholds, noise_users):
    """Min sum p s.t. sum_{T in pi} p_T g_kT - th * sum_I p_I g_kI >= th * noise."""
    m = gains.shape[1]
    rows, rhs = [], []
    for d, (k, members) in enumerate(descs_local):
        row = np.zeros(m)
        row[list(members)] = gains[k, list(members)]
        row[interf_local[k]] -= thresholds[d] * gains[k, interf_local[k]]
        rows.append(row)
        rhs.append(thresholds[d] * noise_users[k])
    Fm = np.vstack(rows + [np.eye(m)])
    g = np.concatenate([-np.asarray(rhs), np.zeros(m)])
    prog = ConicProgram(np.ones(m))
    prog.add("nonneg", Fm, g, "rate region")
    rep = solve(prog, Tolerances(1e-10, 1e-10, 200))
    if not rep.ok:
        return None
    p = np.maximum(rep.x, 0.0)
    # repair solver slack so every inequality holds exactly
    lhs = Fm[:-m] @ p + g[:-m]
    if np.any(lhs < 0):
        p = p * (1.0 + 1e-9)
        for _ in range(60):
            lhs = Fm[:-m] @ p + g[:-m]
            if np.all(lhs >= 0):
                break
            p = p * 1.001 + 1e-15
        else:
            return None
    return p


def sdr_init(plan: DeliveryPlan, channels: ChannelRealization, slot: int,
             randomizations: int = 1000, rng=None, rates: np.ndarray | None = None) -> SDRResult:
    """Relaxed lifted problem for one slot followed by beamformer extraction.

    Each beamformer w (complex, length N) is lifted through its interleaved
    real vector x to X = x x^T (2N x 2N, PSD); |h^H w|^2 = x^T (g g^T + g' g'^T) x
    and ||w||^2 = tr X, so dropping rank constraints gives a linear program
    over PSD matrices whose value lower-bounds the slot power.
    """
    rng = np.random.default_rng(rng)
    rates = plan.rates if rates is None else np.asarray(rates)
    K, t, N = plan.K, plan.t, channels.N_T
    A = _targets(K, t)
    col = rates[:, slot]
    f = float(plan.fractions[slot])
    act = [j for j in plan.slots[slot] if col[j] > 0]
    W_out = np.zeros((A.shape[0], N), dtype=complex)
    if not act:
        return SDRResult(W_out, 0.0, 0.0, True, 0)
    sig = np.sqrt(channels.noise)
    Hn = channels.H / sig[:, None]  # unit noise
    descs = _slot_descriptors(K, t, act, col, f, slot, A)
    loc = {j: a for a, j in enumerate(act)}
    m, n2 = len(act), 2 * N
    tri = svec_index(n2)
    ntri = len(tri)
    # svec coefficients of tr(Hr X) for each user, and of tr(X)
    hrow = np.zeros((K, ntri))
    for k in range(K):
        g, gp = _real_gain_rows(Hn[k])
        Hr = np.outer(g, g) + np.outer(gp, gp)
        hrow[k] = [Hr[i, i] if i == j else math.sqrt(2.0) * Hr[i, j] for i, j in tri]
    trrow = np.array([1.0 if i == j else 0.0 for i, j in tri])
    c = np.concatenate([trrow] * m)
    prog = ConicProgram(c)
    # rate region: sum_{T in pi} tr(H X_T) - th (sum_I tr(H X_I) + 1) >= 0
    thr = np.array([2.0 ** (dd.rate_sum / f) - 1.0 for dd in descs])
    Fm = np.zeros((len(descs), m * ntri))
    gv = np.zeros(len(descs))
    interf = {k: [loc[j] for j in act if not A[j, k]] for k in range(K)}
    for d, dd in enumerate(descs):
        for j in dd.messages:
            Fm[d, loc[j] * ntri:(loc[j] + 1) * ntri] += hrow[dd.user]
        for a in interf[dd.user]:
            Fm[d, a * ntri:(a + 1) * ntri] -= thr[d] * hrow[dd.user]
        gv[d] = -thr[d]
    prog.add("nonneg", sp.csr_matrix(Fm), gv, "rate region")
    for a in range(m):
        E = sp.lil_matrix((ntri, m * ntri))
        for r in range(ntri):
            E[r, a * ntri + r] = 1.0
        prog.add("psd", E.tocsr(), np.zeros(ntri), f"X[{act[a]}]")
    rep = solve(prog, Tolerances(1e-9, 1e-9, 300))
    if rep.status == "infeasible":
        raise SlotInfeasibleError(slot, "relaxation infeasible")
    if not rep.ok:
        raise InitializationError(f"slot {slot}: relaxation solve failed ({rep.raw_status})")
    lower = float(rep.objective)
    Ws = []
    rank_one = True
    for a in range(m):
        v = rep.x[a * ntri:(a + 1) * ntri]
        X = np.zeros((n2, n2))
        for val, (i, j) in zip(v, tri):
            X[i, j] = X[j, i] = val if i == j else val / math.sqrt(2.0)
        Wc = _complex_from_lift(X)
        lam, U = np.linalg.eigh(Wc)
        lam = np.clip(lam[::-1], 0.0, None)
        U = U[:, ::-1]
        Ws.append((lam, U))
        if N > 1 and lam[0] > 0 and lam[1] / lam[0] > 1e-6:
            rank_one = False
    # candidate directions: principal eigenvectors, then Gaussian draws
    dirs = [np.stack([U[:, 0] for lam, U in Ws])]
    if not rank_one:
        for _ in range(randomizations):
            z = (rng.standard_normal((m, N)) + 1j * rng.standard_normal((m, N))) / math.sqrt(2)
            dirs.append(np.stack([U @ (np.sqrt(lam) * z[a]) for a, (lam, U) in enumerate(Ws)]))
    dirs = np.stack(dirs)  # (C, m, N)
    norms = np.linalg.norm(dirs, axis=2, keepdims=True)
    dirs = dirs / np.where(norms > 0, norms, 1.0)
    descs_local = [(dd.user, tuple(loc[j] for j in dd.messages)) for dd in descs]
    no_interf = all(len(interf[dd.user]) == 0 for dd in descs)
    single = m == 1
    best_p, best_dirs = math.inf, None
    if single:
        gains = np.abs(dirs[:, 0, :] @ Hn.conj().T) ** 2  # (C, K)
        users = np.array([dd.user for dd in descs], dtype=np.int64)
        p = _kernels.min_power_single(gains, thr, np.ones(K), users)
        c_best = int(np.argmin(p))
        if np.isfinite(p[c_best]):
            best_p, best_dirs = float(p[c_best]), (dirs[c_best], np.array([p[c_best]]))
    else:
        for cand in dirs:
            gains = np.abs(Hn.conj() @ cand.T) ** 2  # (K, m)
            if no_interf and all(len(mem) == 1 for _, mem in descs_local):
                pw = np.zeros(m)
                for d, (k, mem) in enumerate(descs_local):
                    a = mem[0]
                    pw[a] = max(pw[a], thr[d] / gains[k, a]) if gains[k, a] > 0 else math.inf
            else:
                pw = _lp_powers(gains, descs_local, interf, thr, np.ones(K))
                if pw is None:
                    continue
            tot = float(pw.sum())
            if tot < best_p:
                best_p, best_dirs = tot, (cand, pw)
    if best_dirs is None:
        raise InitializationError(f"slot {slot}: no feasible randomized candidate")
    cand, pw = best_dirs
    for a, j in enumerate(act):
        W_out[j] = math.sqrt(pw[a]) * cand[a]
    return SDRResult(W_out, float((np.abs(W_out) ** 2).sum()), lower, rank_one, len(dirs))


# ---------------------------------------------------------------------------
# SCA program


class _Program:
    """Variable layout and constraint assembly for one SCA run.

    Columns: beamformers of every active (slot, message) as interleaved real
    vectors, then one eta per rate-region descriptor, then (variable-rate
    mode) one rate per active (slot, message), then the power epigraph p.
    """

    def __init__(self, K, t, N_T, act, fractions, Hn, fixed_rates=None, min_rate=0.0,
                 rate_floor=0.0, sparsity=None, weights=None):
        self.K, self.t, self.N = K, t, N_T
        self.A = _targets(K, t)
        self.act = [list(a) for a in act]
        self.fr = np.asarray(fractions, dtype=float)
        self.weights = self.fr if weights is None else np.asarray(weights, dtype=float)
        self.Hn = Hn
        self.variable = fixed_rates is None
        self.fixed = fixed_rates
        self.min_rate = min_rate
        self.rate_floor = rate_floor
        self.sparsity = sparsity  # (xi, s) or None
        n2 = 2 * N_T
        self.n2 = n2
        # beamformer columns
        self.wcol = []
        col = 0
        for a in self.act:
            self.wcol.append([col + n2 * q for q in range(len(a))])
            col += n2 * len(a)
        self.nw = col
        self.Gr = np.empty((K, n2))
        self.Gi = np.empty((K, n2))
        for k in range(K):
            self.Gr[k], self.Gi[k] = _real_gain_rows(Hn[k])
        # descriptors
        d_slot, d_user, d_members, d_interf = [], [], [], []
        for i, a in enumerate(self.act):
            for k in range(K):
                mine = [q for q, j in enumerate(a) if self.A[j, k]]
                if not mine:
                    continue
                intf = [q for q, j in enumerate(a) if not self.A[j, k]]
                for mask in _subset_masks(len(mine)):
                    d_slot.append(i)
                    d_user.append(k)
                    d_members.append(tuple(mine[b] for b in range(len(mine)) if mask >> b & 1))
                    d_interf.append(intf)
        self.d_slot = np.array(d_slot, dtype=np.int64)
        self.d_user = np.array(d_user, dtype=np.int64)
        self.d_members = d_members
        self.d_interf = d_interf
        self.D = len(d_members)
        self.eta0 = self.nw
        col = self.nw + self.D
        # one interference epigraph y >= sum_I |h_k^H w_I|^2 per (slot, user)
        self.ycol = {}
        for i, k, intf in zip(d_slot, d_user, d_interf):
            if intf and (i, k) not in self.ycol:
                self.ycol[(i, k)] = col
                col += 1
        self.d_ycol = np.array([self.ycol.get((i, k), -1) for i, k in zip(d_slot, d_user)],
                               dtype=np.int64)
        self.rcol = []
        if self.variable:
            for a in self.act:
                self.rcol.append([col + q for q in range(len(a))])
                col += len(a)
        self.pcol = col
        self.n = col + 1
        # rate sums of descriptors (fixed mode) -> thresholds
        if not self.variable:
            self.theta = np.array([
                2.0 ** (sum(self.fixed[i][q] for q in mem) / self.fr[i]) - 1.0
                for i, mem in zip(d_slot, d_members)])
        # pairs (descriptor, member) for the linearized rows
        pd, pw, pu, ps, pq = [], [], [], [], []
        for d, (i, k, mem) in enumerate(zip(d_slot, d_user, d_members)):
            for q in mem:
                pd.append(d)
                pw.append(self.wcol[i][q])
                pu.append(k)
                ps.append(i)
                pq.append(q)
        self.p_desc = np.array(pd, dtype=np.int64)
        self.p_wcol = np.array(pw, dtype=np.int64)
        self.p_user = np.array(pu, dtype=np.int64)
        self.p_slot = np.array(ps, dtype=np.int64)
        self.p_q = np.array(pq, dtype=np.int64)
        self._build_constant()

    # -- helpers ---------------------------------------------------------
    def split(self, x):
        W = []
        for i, a in enumerate(self.act):
            blk = x[self.wcol[i][0]:self.wcol[i][0] + self.n2 * len(a)] if a else np.zeros(0)
            blk = blk.reshape(len(a), self.N, 2)
            W.append(blk[..., 0] + 1j * blk[..., 1])
        eta = x[self.eta0:self.eta0 + self.D]
        rates = [x[c[0]:c[0] + len(c)] if c else np.zeros(0) for c in self.rcol] \
            if self.variable else [np.asarray(r) for r in self.fixed]
        return W, eta, rates

    def pack(self, W, eta, rates=None):
        x = np.zeros(self.n)
        for i, a in enumerate(self.act):
            if a:
                blk = np.stack([W[i].real, W[i].imag], axis=-1).reshape(-1)
                x[self.wcol[i][0]:self.wcol[i][0] + blk.size] = blk
        x[self.eta0:self.eta0 + self.D] = eta
        if self.variable:
            for i, c in enumerate(self.rcol):
                if c:
                    x[c[0]:c[0] + len(c)] = rates[i]
        x[self.pcol] = self.power(W)
        return x

    def power(self, W):
        return float(sum(w * float((np.abs(Wi) ** 2).sum()) for w, Wi in zip(self.weights, W)))

    def sinr_sums(self, W):
        out = np.zeros(self.D)
        noise = np.ones(self.K)
        for i, a in enumerate(self.act):
            sel = np.flatnonzero(self.d_slot == i)
            if not sel.size:
                continue
            G = np.abs(self.Hn.conj() @ W[i].T) ** 2
            Al = self.A[a]
            mask = np.zeros((sel.size, len(a)), dtype=np.int64)
            for r, d in enumerate(sel):
                mask[r, list(self.d_members[d])] = 1
            out[sel] = _kernels.sinr_sums(G, Al, noise, self.d_user[sel], mask)
        return out

    def margins(self, W, rates):
        """Worst original-constraint margin (bits, or rate units)."""
        eta = self.sinr_sums(W)
        worst = math.inf
        for d in range(self.D):
            i = self.d_slot[d]
            rs = sum(rates[i][q] for q in self.d_members[d])
            worst = min(worst, self.fr[i] * math.log2(1.0 + max(eta[d], 0.0)) - rs)
        if self.variable:
            for j, tot in self._message_totals(rates).items():
                worst = min(worst, tot - self.min_rate)
            worst = min(worst, min((float(r.min()) - self.rate_floor for r in rates if r.size),
                                   default=math.inf))
            if self.sparsity is not None:
                xi, s = self.sparsity
                for i, a in enumerate(self.act):
                    for k in range(self.K):
                        q = [q for q, j in enumerate(a) if self.A[j, k]]
                        if q:
                            fsum = (2 / math.pi) * float(np.arctan(np.maximum(rates[i][q], 0) / xi).sum())
                            worst = min(worst, s - fsum)
        return worst, eta

    def _message_totals(self, rates):
        tot = {}
        for i, a in enumerate(self.act):
            for q, j in enumerate(a):
                tot[j] = tot.get(j, 0.0) + float(rates[i][q])
        return tot

    # -- constraint assembly ----------------------------------------------
    def _build_constant(self):
        n, n2 = self.n, self.n2
        rows, cols, vals, g = [], [], [], []
        # epigraph: ||sqrt(w_i) x_i||^2 <= p  as (p+1, 2 sqrt(w) x, p-1)
        r = 0
        rows.append(r); cols.append(self.pcol); vals.append(1.0); g.append(1.0)
        r += 1
        for i, a in enumerate(self.act):
            sw = math.sqrt(self.weights[i])
            for q in range(len(a)):
                for e in range(n2):
                    rows.append(r); cols.append(self.wcol[i][q] + e); vals.append(2.0 * sw); g.append(0.0)
                    r += 1
        rows.append(r); cols.append(self.pcol); vals.append(1.0); g.append(-1.0)
        r += 1
        self.epi = (sp.csr_matrix((vals, (rows, cols)), shape=(r, n)), np.array(g), r)
        # interference epigraphs (y + 1, 2 u, y - 1) with u = [g_k x_I, g'_k x_I]
        rows, cols, vals, g, dims = [], [], [], [], []
        r = 0
        for (i, k), yc in self.ycol.items():
            intf = [q for q, j in enumerate(self.act[i]) if not self.A[j, k]]
            rows.append(r); cols.append(yc); vals.append(1.0); g.append(1.0)
            r += 1
            for q in intf:
                c0 = self.wcol[i][q]
                for G in (self.Gr[k], self.Gi[k]):
                    rows.extend([r] * n2); cols.extend(range(c0, c0 + n2)); vals.extend(2.0 * G)
                    g.append(0.0)
                    r += 1
            rows.append(r); cols.append(yc); vals.append(1.0); g.append(-1.0)
            r += 1
            dims.append(2 + 2 * len(intf))
        self.interf_block = (sp.csr_matrix((vals, (rows, cols)), shape=(r, n)), np.array(g),
                             tuple(dims))
        # descriptor rows subtract y of their (slot, user)
        has_y = np.flatnonzero(self.d_ycol >= 0)
        self.ysub = sp.csr_matrix((-np.ones(has_y.size), (has_y, self.d_ycol[has_y])),
                                  shape=(self.D, n))
        # rate blocks
        if not self.variable:
            F = sp.csr_matrix((np.ones(self.D), (np.arange(self.D), self.eta0 + np.arange(self.D))),
                              shape=(self.D, n))
            self.rate_nonneg = (F, -self.theta)
            self.exp_block = None
        else:
            rows, cols, vals = [], [], []
            g = []
            for d in range(self.D):
                i = self.d_slot[d]
                for q in self.d_members[d]:
                    rows.append(3 * d); cols.append(self.rcol[i][q]); vals.append(LN2 / self.fr[i])
                rows.append(3 * d + 2); cols.append(self.eta0 + d); vals.append(1.0)
                g.extend([0.0, 1.0, 1.0])
            self.exp_block = (sp.csr_matrix((vals, (rows, cols)), shape=(3 * self.D, n)), np.array(g))
            rows, cols, vals, g = [], [], [], []
            r = 0
            for c in self.rcol:
                for cc in c:
                    rows.append(r); cols.append(cc); vals.append(1.0); g.append(-self.rate_floor)
                    r += 1
            per_msg = {}
            for i, a in enumerate(self.act):
                for q, j in enumerate(a):
                    per_msg.setdefault(j, []).append(self.rcol[i][q])
            for j in sorted(per_msg):
                for cc in per_msg[j]:
                    rows.append(r); cols.append(cc); vals.append(1.0)
                g.append(-self.min_rate)
                r += 1
            self.rate_nonneg = (sp.csr_matrix((vals, (rows, cols)), shape=(r, n)), np.array(g))

    def subproblem(self, W, eta, rates) -> ConicProgram:
        n, n2 = self.n, self.n2
        # a = h_k^H w_T at the current point for every (descriptor, member)
        a = np.empty(self.p_desc.size, dtype=complex)
        for i in range(len(self.act)):
            sel = self.p_slot == i
            if np.any(sel):
                a[sel] = np.einsum("pn,pn->p", self.Hn[self.p_user[sel]].conj(), W[i][self.p_q[sel]])
        S = np.bincount(self.p_desc, weights=np.abs(a) ** 2, minlength=self.D)
        coef = (2.0 / eta[self.p_desc])[:, None] * (
            a.real[:, None] * self.Gr[self.p_user] + a.imag[:, None] * self.Gi[self.p_user])
        eta_coef = -S / eta ** 2
        # v-row of each descriptor: coef . x_T + eta_coef * eta_d - 1
        vrow_d = np.repeat(self.p_desc, n2)
        vcol = (self.p_wcol[:, None] + np.arange(n2)).ravel()
        vval = coef.ravel()
        V = sp.csr_matrix(
            (np.concatenate([vval, eta_coef]),
             (np.concatenate([vrow_d, np.arange(self.D)]),
              np.concatenate([vcol, self.eta0 + np.arange(self.D)]))),
            shape=(self.D, n))
        prog = ConicProgram(np.eye(1, n, self.pcol).ravel())
        prog.add("soc", self.epi[0], self.epi[1], "power epigraph")
        if self.ycol:
            F, g, dims = self.interf_block
            prog.add("soc", F, g, "interference", dims=dims)
        # linearized signal term >= interference + noise
        prog.add("nonneg", V + self.ysub, -np.ones(self.D), "signal")
        prog.add("nonneg", self.rate_nonneg[0], self.rate_nonneg[1], "rates")
        if self.exp_block is not None:
            prog.add("exp", self.exp_block[0], self.exp_block[1], "log rate")
        if self.sparsity is not None:
            xi, s = self.sparsity
            rows, cols, vals, g = [], [], [], []
            r = 0
            for i, a in enumerate(self.act):
                for k in range(self.K):
                    qs = [q for q, j in enumerate(a) if self.A[j, k]]
                    if not qs:
                        continue
                    rv = np.asarray(rates[i])[qs]
                    slope = xi / (xi ** 2 + rv ** 2)
                    const = float(np.sum(np.arctan(rv / xi) - slope * rv))
                    for q, sl in zip(qs, slope):
                        rows.append(r); cols.append(self.rcol[i][q]); vals.append(-sl)
                    g.append(math.pi * s / 2 - const)
                    r += 1
            prog.add("nonneg", sp.csr_matrix((vals, (rows, cols)), shape=(r, n)), np.array(g),
                     "sparsity")
        return prog


def _run_sca(prog: _Program, W0, rates0, cfg: SCAConfig, slot_label=0):
    """SCA loop with convex-combination updates; returns
    (W, eta, rates, status, iterations, trace)."""
    W = [np.array(w, dtype=complex) for w in W0]
    rates = [np.array(r, dtype=float) for r in rates0]
    margin, eta = prog.margins(W, rates)
    if margin < -cfg.feas_tol:
        raise InitializationError(f"slot {slot_label}: initial point infeasible (margin {margin:.3g})")
    eta = np.maximum(eta, 1e-300)
    obj = prog.power(W)
    trace = [(slot_label, 0, obj, margin)]
    status, small, it = "iteration-cap", 0, 0
    if prog.D == 0:
        return W, eta, rates, "converged", 0, trace
    for it in range(1, cfg.max_iter + 1):
        sub = prog.subproblem(W, eta, rates)
        rep = solve(sub, cfg.solver)
        if rep.x is None:
            status = "degraded"
            break
        Wh, etah, rh = prog.split(rep.x)
        mu = cfg.step
        accepted = False
        for _ in range(30):
            Wn = [w + mu * (wh - w) for w, wh in zip(W, Wh)]
            etan = eta + mu * (etah - eta)
            rn = [r + mu * (h - r) for r, h in zip(rates, rh)] if prog.variable else rates
            m_new, true_eta = prog.margins(Wn, rn)
            obj_new = prog.power(Wn)
            if m_new >= -cfg.feas_tol and obj_new <= obj * (1 + 1e-12) + 1e-15:
                accepted = True
                break
            mu *= 0.5
        if not accepted:
            status = "converged"
            it -= 1
            break
        etan = np.maximum(np.minimum(etan, true_eta), 1e-300)
        change = abs(obj - obj_new) / max(obj, 1e-300)
        W, eta, rates, obj = Wn, etan, rn, obj_new
        trace.append((slot_label, it, obj, m_new))
        small = small + 1 if change < cfg.rel_tol else 0
        if small >= cfg.patience or obj == 0.0:
            status = "converged"
            break
    return W, eta, rates, status, it, trace


# ---------------------------------------------------------------------------
# public solve


def _active(plan: DeliveryPlan, rates: np.ndarray, i: int, variable: bool):
    if variable:
        return list(plan.slots[i])
    return [j for j in plan.slots[i] if rates[j, i] > 0]


def _initial_point(plan, channels, cfg, rng, init_point=None):
    if cfg.init == "point":
        if init_point is None:
            raise InputError("init='point' needs init_point")
        return np.asarray(init_point, dtype=complex)
    if cfg.init == "zf":
        try:
            return zero_forcing_init(plan, channels)
        except InitializationError:
            pass  # fall back to the relaxation
    W = np.zeros((plan.num_slots, plan.num_messages, channels.N_T), dtype=complex)
    for i in range(plan.num_slots):
        W[i] = sdr_init(plan, channels, i, cfg.randomizations, rng).W
    return W


def sca_solve(plan: DeliveryPlan, channels: ChannelRealization, config: SCAConfig | None = None,
              init_point=None) -> BeamformingSolution:
    """Minimum-power beamformers for ``plan`` by SCA.

    Fixed rates with ``decouple=True`` solve each slot separately (slots do
    not interact once the rates are fixed).  Otherwise one program covers all
    slots.  Infeasible slots are reported in ``slot_status`` and make the
    overall status "failed" instead of raising.
    """
    cfg = config or SCAConfig()
    if channels.K != plan.K:
        raise InputError(f"channels have {channels.K} users, plan has {plan.K}")
    rng = np.random.default_rng(cfg.seed)
    B, M, N = plan.num_slots, plan.num_messages, channels.N_T
    rates = np.array(plan.rates, dtype=float)
    variable = cfg.rate_mode == "variable"
    W_out = np.zeros((B, M, N), dtype=complex)
    if plan.R == 0 or not np.any(rates > 0):
        return BeamformingSolution(W_out, rates * 0, plan.fractions.copy(), 0.0, np.zeros(B),
                                   status="converged", slot_status=["converged"] * B)
    try:
        W0 = _initial_point(plan, channels, cfg, rng, init_point)
    except SlotInfeasibleError as exc:
        st = ["ok"] * B
        st[exc.slot] = "infeasible"
        return BeamformingSolution(W_out, rates, plan.fractions.copy(), math.inf,
                                   np.full(B, math.inf), status="failed", slot_status=st)
    sig = np.sqrt(channels.noise)
    groups = [[i] for i in range(B)] if (cfg.decouple and not variable) else [list(range(B))]
    trace, slot_status, iters, status_all = [], ["ok"] * B, 0, "converged"
    eta_out = {}
    for grp in groups:
        act = [_active(plan, rates, i, variable) for i in grp]
        if not any(act):
            for i in grp:
                slot_status[i] = "converged"
            continue
        fr = plan.fractions[grp]
        weights = np.ones(1) if len(grp) == 1 else fr
        W0g = [W0[i][a] for i, a in zip(grp, act)]
        p0 = float(sum(w * (np.abs(x) ** 2).sum() for w, x in zip(weights, W0g)))
        scale = max(p0, 1e-300)
        Hn = channels.H * math.sqrt(scale) / sig[:, None]
        Wn0 = [x / math.sqrt(scale) for x in W0g]
        min_rate = plan.R / comb(plan.K, plan.t)
        fixed = None if variable else [rates[a, i] for i, a in zip(grp, act)]
        prog = _Program(plan.K, plan.t, N, act, fr, Hn, fixed_rates=fixed, min_rate=min_rate,
                        rate_floor=1e-6 * min_rate if variable else 0.0, weights=weights)
        r0 = [rates[a, i] for i, a in zip(grp, act)]
        label = grp[0] if len(grp) == 1 else -1
        try:
            W, eta, r, st, it, tr = _run_sca(prog, Wn0, r0, cfg, label)
        except InitializationError:
            if cfg.init == "point":
                raise
            for i in grp:
                slot_status[i] = "infeasible"
            status_all = "failed"
            continue
        iters = max(iters, it)
        trace += [(s, k, o * scale, m) for s, k, o, m in tr]
        for q, (i, a) in enumerate(zip(grp, act)):
            W_out[i][a] = W[q] * math.sqrt(scale)
            if variable:
                rates[:, i] = 0.0
                rates[a, i] = r[q]
            slot_status[i] = st
        for d in range(prog.D):
            i = grp[prog.d_slot[d]]
            members = tuple(act[prog.d_slot[d]][q] for q in prog.d_members[d])
            eta_out[(i, int(prog.d_user[d]), members)] = float(eta[d])
        if st == "degraded" and status_all == "converged":
            status_all = "degraded"
        elif st == "iteration-cap" and status_all == "converged":
            status_all = "iteration-cap"
    slot_power = (np.abs(W_out) ** 2).sum(axis=(1, 2))
    power = float(plan.fractions @ slot_power) if status_all != "failed" else math.inf
    return BeamformingSolution(W_out, rates, plan.fractions.copy(), power, slot_power, eta_out,
                               status_all, iters, trace, slot_status)
