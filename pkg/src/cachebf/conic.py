"""Solver-agnostic conic programs and their solution with Clarabel.

A :class:`ConicProgram` minimizes ``c @ x`` over real ``x`` subject to blocks
``F x + g in K`` where K is one of

* ``"zero"``    every entry equal to 0
* ``"nonneg"``  every entry >= 0
* ``"soc"``     (u, v_1, ..., v_m) with ||v|| <= u, total length >= 2
* ``"exp"``     triples (x, y, z) with y exp(x / y) <= z, y > 0
* ``"psd"``     a symmetric n x n matrix stored as its upper triangle,
  column by column ((0,0), (0,1), (1,1), (0,2), ...), off-diagonal entries
  multiplied by sqrt(2); length n (n + 1) / 2

Blocks are kept in insertion order; an exp block holds one or more stacked
triples.  Complex quantities are split by callers into interleaved real and
imaginary parts, ``[re_0, im_0, re_1, im_1, ...]``.
"""
from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConeError

CONE_KINDS = ("zero", "nonneg", "soc", "exp", "psd")
LN2 = math.log(2.0)


def psd_side(length: int) -> int:
    n = int(round((math.sqrt(8 * length + 1) - 1) / 2))
    if n * (n + 1) // 2 != length or n < 1:
        raise ConeError(f"psd block of length {length} is not triangular")
    return n


def svec_index(n: int) -> list[tuple[int, int]]:
    """(row, col) of every svec slot for an n x n matrix, in storage order."""
    return [(i, j) for j in range(n) for i in range(j + 1)]


def svec(X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    return np.array([X[i, j] * (1.0 if i == j else math.sqrt(2.0)) for i, j in svec_index(n)])


def smat(v: np.ndarray) -> np.ndarray:
    n = psd_side(len(v))
    X = np.zeros((n, n))
    for val, (i, j) in zip(v, svec_index(n)):
        if i == j:
            X[i, i] = val
        else:
            X[i, j] = X[j, i] = val / math.sqrt(2.0)
    return X


@dataclass
class ConeBlock:
    kind: str
    F: sp.csr_matrix
    g: np.ndarray
    name: str = ""
    dims: tuple = ()  # soc only: lengths of stacked cones; empty means one cone

    def __post_init__(self):
        if self.kind not in CONE_KINDS:
            raise ConeError(f"unknown cone kind {self.kind!r}")
        self.F = sp.csr_matrix(self.F)
        self.g = np.asarray(self.g, dtype=float).ravel()
        m = self.F.shape[0]
        if self.g.shape != (m,):
            raise ConeError(f"block {self.name!r}: F has {m} rows but g has {self.g.size}")
        if self.kind == "soc":
            self.dims = tuple(int(d) for d in self.dims) or (m,)
            if sum(self.dims) != m or min(self.dims) < 2:
                raise ConeError(f"soc block {self.name!r}: cone lengths {self.dims} "
                                f"invalid for {m} rows (each must be >= 2)")
        if self.kind == "exp" and (m == 0 or m % 3):
            raise ConeError(f"exp block {self.name!r} has length {m}, not a multiple of 3")
        if self.kind == "psd":
            psd_side(m)
        if not (np.all(np.isfinite(self.F.data)) and np.all(np.isfinite(self.g))):
            raise ConeError(f"block {self.name!r} has non-finite coefficients")

    @property
    def size(self) -> int:
        return self.F.shape[0]

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.F @ x + self.g

    def violation(self, x: np.ndarray) -> float:
        e = self.value(x)
        if self.kind == "soc" and len(self.dims) > 1:
            cuts = np.cumsum(self.dims)[:-1]
            return max(cone_violation("soc", part) for part in np.split(e, cuts))
        return cone_violation(self.kind, e)


def cone_violation(kind: str, e: np.ndarray) -> float:
    """Distance-like measure of how far ``e`` is outside the cone, scaled by
    1 + max|e| so that it is comparable across blocks of different magnitude."""
    e = np.asarray(e, dtype=float)
    if e.size == 0:
        return 0.0
    scale = 1.0 + float(np.max(np.abs(e)))
    if kind == "zero":
        v = float(np.max(np.abs(e)))
    elif kind == "nonneg":
        v = max(0.0, -float(np.min(e)))
    elif kind == "soc":
        v = max(0.0, float(np.linalg.norm(e[1:]) - e[0]))
    elif kind == "exp":
        v = 0.0
        for x, y, z in e.reshape(-1, 3):
            if y > 0 and z > 0:
                v = max(v, y * max(0.0, x / y - math.log(z / y)))
            elif y > 0:
                v = max(v, y - z)
            else:
                # closure of the cone at y = 0: x <= 0, z >= 0
                v = max(v, -y + max(x, 0.0) + max(-z, 0.0))
    elif kind == "psd":
        v = max(0.0, -float(np.linalg.eigvalsh(smat(e)).min()))
    else:
        raise ConeError(kind)
    return v / scale


@dataclass
class ConicProgram:
    """Minimize c @ x subject to the cone blocks and optional variable bounds."""
    c: np.ndarray
    blocks: list = field(default_factory=list)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        if not np.all(np.isfinite(self.c)):
            raise ConeError("objective has non-finite coefficients")
        for blk in self.blocks:
            if blk.F.shape[1] != self.n:
                raise ConeError(f"block {blk.name!r} has {blk.F.shape[1]} columns, program has {self.n}")

    @property
    def n(self) -> int:
        return self.c.size

    def add(self, kind, F, g, name="", dims=()) -> ConeBlock:
        blk = ConeBlock(kind, sp.csr_matrix(F), g, name, dims)
        if blk.F.shape[1] != self.n:
            raise ConeError(f"block {name!r} has {blk.F.shape[1]} columns, program has {self.n}")
        self.blocks.append(blk)
        return blk

    def bound_blocks(self) -> list:
        out = []
        eye = sp.identity(self.n, format="csr")
        if self.lb is not None:
            lb = np.asarray(self.lb, dtype=float)
            idx = np.flatnonzero(np.isfinite(lb))
            if idx.size:
                out.append(ConeBlock("nonneg", eye[idx], -lb[idx], "lower bounds"))
        if self.ub is not None:
            ub = np.asarray(self.ub, dtype=float)
            idx = np.flatnonzero(np.isfinite(ub))
            if idx.size:
                out.append(ConeBlock("nonneg", -eye[idx], ub[idx], "upper bounds"))
        return out

    def max_violation(self, x) -> float:
        blocks = self.blocks + self.bound_blocks()
        return max((b.violation(x) for b in blocks), default=0.0)

    def dump(self, fp=None) -> str:
        """Plain-text dump for cross-checking with external solvers.

        Layout::

            conic-program v1
            n <num vars>
            c <j> <value>                     (nonzeros only)
            block <kind> <rows> <name> [soc cone lengths]
            F <row> <col> <value>             (nonzeros only)
            g <row> <value>
            end
        """
        out = io.StringIO()
        out.write(f"conic-program v1\nn {self.n}\n")
        for j in np.flatnonzero(self.c):
            out.write(f"c {j} {float(self.c[j])!r}\n")
        for blk in self.blocks + self.bound_blocks():
            dims = " ".join(str(d) for d in blk.dims) if blk.kind == "soc" else ""
            out.write(f"block {blk.kind} {blk.size} {blk.name.replace(' ', '_') or '-'} {dims}".rstrip() + "\n")
            coo = blk.F.tocoo()
            for r, col, v in sorted(zip(coo.row, coo.col, coo.data)):
                out.write(f"F {r} {col} {float(v)!r}\n")
            for r, v in enumerate(blk.g):
                out.write(f"g {r} {float(v)!r}\n")
            out.write("end\n")
        text = out.getvalue()
        if fp is not None:
            fp.write(text)
        return text


@dataclass(frozen=True)
class Tolerances:
    feas: float = 1e-8
    gap: float = 1e-8
    max_iter: int = 200


@dataclass
class SolveReport:
    status: str  # optimal | infeasible | numerical-failure | iteration-limit
    x: np.ndarray | None
    objective: float
    max_violation: float
    iterations: int = 0
    solve_time: float = 0.0
    raw_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


_CLARABEL_CONES = {"zero", "nonneg", "soc", "exp", "psd"}


def _clarabel_cones(blocks):
    import clarabel

    cones = []
    for b in blocks:
        if b.kind == "zero":
            cones.append(clarabel.ZeroConeT(b.size))
        elif b.kind == "nonneg":
            cones.append(clarabel.NonnegativeConeT(b.size))
        elif b.kind == "soc":
            cones.extend(clarabel.SecondOrderConeT(d) for d in b.dims)
        elif b.kind == "exp":
            cones.extend(clarabel.ExponentialConeT() for _ in range(b.size // 3))
        elif b.kind == "psd":
            cones.append(clarabel.PSDTriangleConeT(psd_side(b.size)))
    return cones


def solve(program: ConicProgram, tol: Tolerances | None = None) -> SolveReport:
    """Solve with Clarabel's interior-point method.

    Never raises on numerical trouble; the status field carries the outcome.
    ``status == "optimal"`` is only reported when the recomputed maximum
    (scaled) cone violation is within ``tol.feas`` times 100, the slack
    accounting for the solver's own relative stopping rule.
    """
    import clarabel

    tol = tol or Tolerances()
    blocks = [b for b in program.blocks + program.bound_blocks() if b.size]
    n = program.n
    if blocks:
        A = sp.vstack([-b.F for b in blocks], format="csc")
        bvec = np.concatenate([b.g for b in blocks])
    else:
        A = sp.csc_matrix((0, n))
        bvec = np.zeros(0)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = tol.feas
    settings.tol_gap_abs = tol.gap
    settings.tol_gap_rel = tol.gap
    settings.max_iter = tol.max_iter
    settings.presolve_enable = False
    t0 = time.perf_counter()
    try:
        solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), program.c, A, bvec,
                                        _clarabel_cones(blocks), settings)
        sol = solver.solve()
    except Exception as exc:  # solver-side panics surface as exceptions
        return SolveReport("numerical-failure", None, math.nan, math.inf,
                           raw_status=f"exception: {exc}")
    elapsed = time.perf_counter() - t0
    raw = str(sol.status)
    x = np.array(sol.x)
    if "Infeasible" in raw:
        return SolveReport("infeasible", None, math.nan, math.inf, sol.iterations, elapsed, raw)
    if not np.all(np.isfinite(x)):
        return SolveReport("numerical-failure", None, math.nan, math.inf, sol.iterations, elapsed, raw)
    viol = program.max_violation(x)
    obj = float(program.c @ x)
    if raw in ("Solved", "AlmostSolved") and viol <= 100 * tol.feas:
        status = "optimal"
    elif raw == "MaxIterations":
        status = "iteration-limit"
    else:
        status = "numerical-failure"
    return SolveReport(status, x, obj, viol, sol.iterations, elapsed, raw)


# ---------------------------------------------------------------------------
# reformulations


def reformulate_quadratic(Q, q, r, name="quadratic") -> ConeBlock:
    """Rewrite x'Qx + q'x + r <= 0 (Q symmetric PSD) as one cone block.

    With Q = F'F the constraint reads ||F x||^2 <= v, v = -q'x - r, which is
    the rotated cone (v + 1, 2 F x, v - 1) in SOC.  When Q = 0 the block is the
    single nonneg row v >= 0.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    q = np.asarray(q, dtype=float).ravel()
    n = q.size
    if Q.shape != (n, n):
        raise ConeError(f"Q has shape {Q.shape}, expected {(n, n)}")
    if not np.allclose(Q, Q.T, atol=1e-12 * (1 + np.abs(Q).max())):
        raise ConeError("Q is not symmetric")
    vrow = sp.csr_matrix(-q.reshape(1, n))
    if not np.any(Q):
        return ConeBlock("nonneg", vrow, np.array([-float(r)]), name)
    lam, U = np.linalg.eigh(Q)
    neg = lam < -1e-12 * max(1.0, lam.max())
    if np.any(neg):
        k = int(np.argmin(lam))
        worst = int(np.argmax(np.abs(U[:, k])))
        raise ConeError(
            f"{name}: quadratic form is not PSD (eigenvalue {lam[k]:.3g}, "
            f"dominated by variable {worst}, Q[{worst},{worst}]={Q[worst, worst]:.3g})")
    keep = lam > 1e-14 * max(1.0, lam.max())
    F = (np.sqrt(lam[keep])[:, None] * U[:, keep].T)
    F = sp.vstack([vrow, sp.csr_matrix(2.0 * F), vrow], format="csr")
    g = np.concatenate([[1.0 - r], np.zeros(int(keep.sum())), [-1.0 - r]])
    return ConeBlock("soc", F, g, name)


def rotated_soc(u_F, u_g, v_F, v_g: float, name="rsoc") -> ConeBlock:
    """||u_F x + u_g||^2 <= v_F x + v_g as a standard SOC block."""
    u_F = sp.csr_matrix(u_F)
    v_F = sp.csr_matrix(v_F)
    F = sp.vstack([v_F, 2.0 * u_F, v_F], format="csr")
    g = np.concatenate([[v_g + 1.0], 2.0 * np.asarray(u_g, dtype=float), [v_g - 1.0]])
    return ConeBlock("soc", F, g, name)


def reformulate_log_rate(rate_row, eta_row, scale: float, eta_const: float = 0.0,
                         name="log-rate") -> ConeBlock:
    """Rewrite  rate_row @ x <= scale * log2(1 + eta_row @ x + eta_const).

    Dividing by scale and converting log2 to ln gives
    (ln2 / scale) rate <= ln(1 + eta), i.e. the exp-cone triple
    ((ln2 / scale) rate, 1, 1 + eta).
    """
    if not scale > 0:
        raise ConeError(f"{name}: scale must be positive, got {scale}")
    rate_row = sp.csr_matrix(rate_row)
    eta_row = sp.csr_matrix(eta_row)
    n = rate_row.shape[1]
    F = sp.vstack([rate_row * (LN2 / scale), sp.csr_matrix((1, n)), eta_row], format="csr")
    return ConeBlock("exp", F, np.array([0.0, 1.0, 1.0 + eta_const]), name)
