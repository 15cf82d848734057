"""Monte Carlo power-versus-rate sweeps and the slot/constraint comparison table.

Users are dropped uniformly over an annulus around the base station, the
channel of user k is sqrt(10^(-PL/10)) times i.i.d. CN(0, 1) fading with
PL = 148.1 + 37.6 log10(d / 1 km), and the noise power is -134 dBW.  Every
trial draws from its own RNG stream (seed, trial), and all schemes and rates
of a trial share that channel draw.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path

import numpy as np

from .beamforming import ChannelRealization, SCAConfig, from_dbw, sca_solve, to_dbw
from .caching import make_instance
from .errors import BudgetViolationError, ConfigError, InitializationError
from .scheduler import (DeliveryPlan, ScheduleConfig, baseline_plan, baseline_slot_count,
                        full_superposition, greedy_schedule, min_slots_exact,
                        plan_from_partition, slots_upper_bound)
from .sparse import SparseConfig, solve_joint

CSV_COLUMNS = ("scheme", "K", "N", "M", "N_T", "s", "R_bps_hz", "mean_P_dBW", "std_P_dB",
               "trials_ok", "trials_failed")

TABLE1_ROWS = (
    (10, 1, 1, 1, 1), (10, 1, 1, 1, 3), (10, 1, 1, 1, 5), (10, 1, 1, 1, 7), (10, 1, 1, 1, 9),
    (10, 2, 1, 1, 1), (10, 2, 1, 1, 4), (10, 2, 1, 1, 7),
    (10, 3, 1, 1, 1), (10, 3, 1, 1, 5),
)


@dataclass(frozen=True)
class CellConfig:
    radius_m: float = 500.0
    min_distance_m: float = 35.0
    pl_intercept_db: float = 148.1
    pl_slope_db: float = 37.6
    noise_dbw: float = -134.0

    def __post_init__(self):
        if not 0 < self.min_distance_m < self.radius_m:
            raise ConfigError("need 0 < min_distance_m < radius_m")


def path_loss_db(d_m, cell: CellConfig = CellConfig()):
    return cell.pl_intercept_db + cell.pl_slope_db * np.log10(np.asarray(d_m) / 1000.0)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial)]))


def draw_channels(cell: CellConfig, K: int, N_T: int, rng: np.random.Generator) -> ChannelRealization:
    """Uniform positions over the annulus, path loss and Rayleigh fading."""
    r2 = rng.uniform(cell.min_distance_m ** 2, cell.radius_m ** 2, size=K)
    d = np.sqrt(r2)
    fading = (rng.standard_normal((K, N_T)) + 1j * rng.standard_normal((K, N_T))) / math.sqrt(2)
    gain = np.sqrt(10.0 ** (-path_loss_db(d, cell) / 10.0))
    noise = np.full(K, from_dbw(cell.noise_dbw))
    return ChannelRealization(gain[:, None] * fading, noise)


# ---------------------------------------------------------------------------
# schemes


@dataclass(frozen=True)
class Scheme:
    """kind: greedy (s), exact (s), fs, baseline (alpha), joint (s, B)."""
    kind: str
    s: int | None = None
    alpha: int | None = None
    B: int | None = None

    @property
    def label(self) -> str:
        if self.kind in ("greedy", "exact"):
            return f"{self.kind}(s={self.s})"
        if self.kind == "baseline":
            return f"baseline(alpha={self.alpha})"
        if self.kind == "joint":
            return f"joint(s={self.s},B={self.B})"
        return "FS"

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        """'fs', 'greedy:s=2', 'exact:s=2', 'baseline:alpha=2', 'joint:s=3,B=3'."""
        kind, _, rest = text.strip().partition(":")
        kind = kind.strip().lower()
        kw = {}
        for part in filter(None, (p.strip() for p in rest.split(","))):
            key, eq, val = part.partition("=")
            if not eq:
                raise ConfigError(f"bad scheme option {part!r} in {text!r}")
            try:
                kw[key.strip()] = int(val)
            except ValueError:
                raise ConfigError(f"scheme option {part!r} needs an integer value") from None
        try:
            sch = cls(kind, **kw)
        except TypeError as exc:
            raise ConfigError(f"bad scheme {text!r}: {exc}") from None
        need = {"greedy": ("s",), "exact": ("s",), "fs": (), "baseline": ("alpha",),
                "joint": ("s", "B")}
        if kind not in need:
            raise ConfigError(f"unknown scheme kind {kind!r}")
        missing = [k for k in need[kind] if kw.get(k) is None]
        if missing:
            raise ConfigError(f"scheme {text!r} needs {', '.join(missing)}")
        return sch

    def decode_limit(self, K: int, t: int) -> int:
        if self.kind == "fs":
            return comb(K - 1, t)
        if self.kind == "baseline":
            return comb(t + self.alpha - 1, t)
        return int(self.s)

    def plan(self, instance) -> DeliveryPlan | None:
        if self.kind == "greedy":
            return greedy_schedule(instance, ScheduleConfig(self.s))
        if self.kind == "exact":
            _, slots = min_slots_exact(instance, self.s)
            return plan_from_partition(instance.K, instance.t, instance.R, slots, self.label)
        if self.kind == "fs":
            return full_superposition(instance)
        if self.kind == "baseline":
            return baseline_plan(instance, self.alpha)
        return None


def solve_scheme(scheme: Scheme, instance, channels: ChannelRealization,
                 sca: SCAConfig = SCAConfig()) -> tuple[float, str]:
    """(power in W, status); power is inf on failure."""
    try:
        if scheme.kind == "joint":
            res = solve_joint(channels, instance, SparseConfig(scheme.s, scheme.B))
            sol = res.solution
        else:
            sol = sca_solve(scheme.plan(instance), channels, sca)
    except (InitializationError, BudgetViolationError) as exc:
        return math.inf, f"failed: {exc}"
    if sol.status == "failed":
        return math.inf, "failed"
    return sol.power, sol.status


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    K: int
    N: int
    M: int
    N_T: int
    rates: tuple[float, ...]
    schemes: tuple[Scheme, ...]
    trials: int = 50
    seed: int = 0
    workers: int = 1
    cell: CellConfig = field(default_factory=CellConfig)
    sca: SCAConfig = field(default_factory=SCAConfig)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.rates or not self.schemes:
            raise ConfigError("a sweep needs at least one rate and one scheme")
        r = np.asarray(self.rates, dtype=float)
        if r[0] < 0 or np.any(np.diff(r) <= 0):
            raise ConfigError(f"rate grid must be nonnegative and strictly increasing: {self.rates}")
        make_instance(self.N, self.K, self.M, 0.0, self.N_T)  # validates the scenario

    @classmethod
    def from_mapping(cls, d: dict) -> "SweepSpec":
        known = {"K", "N", "M", "N_T", "rates", "schemes", "trials", "seed", "workers", "cell",
                 "sca"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown sweep keys: {sorted(extra)}")
        try:
            cell = CellConfig(**d.get("cell", {}))
            sca = SCAConfig(**d.get("sca", {}))
            return cls(K=int(d["K"]), N=int(d["N"]), M=int(d["M"]), N_T=int(d["N_T"]),
                       rates=tuple(float(r) for r in d["rates"]),
                       schemes=tuple(Scheme.parse(s) for s in d["schemes"]),
                       trials=int(d.get("trials", 50)), seed=int(d.get("seed", 0)),
                       workers=int(d.get("workers", 1)), cell=cell, sca=sca)
        except KeyError as exc:
            raise ConfigError(f"missing sweep key {exc}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_toml(cls, path) -> "SweepSpec":
        try:
            import tomllib
        except ImportError:  # python < 3.11
            import tomli as tomllib
        try:
            with open(path, "rb") as fh:
                d = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read sweep config {path}: {exc}") from None
        return cls.from_mapping(d)


def _run_trial(args):
    spec, trial = args
    ch = draw_channels(spec.cell, spec.K, spec.N_T, trial_rng(spec.seed, trial))
    out = []
    for R in spec.rates:
        inst = make_instance(spec.N, spec.K, spec.M, R, spec.N_T, ch.noise)
        for sch in spec.schemes:
            p, st = solve_scheme(sch, inst, ch, spec.sca)
            out.append({"trial": trial, "R": R, "scheme": sch.label, "power": p, "status": st})
    return out


def run_trials(spec: SweepSpec) -> list[dict]:
    """Per-trial records, ordered by (trial, rate, scheme) regardless of workers."""
    jobs = [(spec, k) for k in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as ex:
            chunks = list(ex.map(_run_trial, jobs))
    else:
        chunks = [_run_trial(j) for j in jobs]
    return [rec for ch in chunks for rec in ch]


def aggregate(spec: SweepSpec, records: list[dict]) -> list[dict]:
    """One row per (scheme, rate): dBW of the mean linear power over the
    successful trials and the standard deviation of the per-trial dB values."""
    inst = make_instance(spec.N, spec.K, spec.M, 0.0, spec.N_T)
    rows = []
    for sch in spec.schemes:
        for R in spec.rates:
            ps = [r["power"] for r in sorted(records, key=lambda r: r["trial"])
                  if r["scheme"] == sch.label and r["R"] == R]
            ok = [p for p in ps if math.isfinite(p)]
            if ok:
                mean = to_dbw(math.fsum(ok) / len(ok))
                db = [to_dbw(p) if p > 0 else -math.inf for p in ok]
                std = float(np.std(db)) if all(math.isfinite(x) for x in db) else 0.0
            else:
                mean, std = math.nan, math.nan
            rows.append({"scheme": sch.label, "K": spec.K, "N": spec.N, "M": spec.M,
                         "N_T": spec.N_T, "s": sch.decode_limit(inst.K, inst.t),
                         "R_bps_hz": R, "mean_P_dBW": mean, "std_P_dB": std,
                         "trials_ok": len(ok), "trials_failed": len(ps) - len(ok)})
    return rows


def run_sweep(spec: SweepSpec) -> list[dict]:
    return aggregate(spec, run_trials(spec))


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else ("-inf" if v == -math.inf else f"{v:.6f}")
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def gnuplot_script(rows: list[dict], csv_name: str) -> str:
    """Power versus rate, one curve per scheme."""
    schemes = list(dict.fromkeys(r["scheme"] for r in rows))
    lines = [
        "set datafile separator ','",
        "set xlabel 'R (bps/Hz)'",
        "set ylabel 'average transmit power (dBW)'",
        "set key left top",
        "set grid",
    ]
    plots = [f"'{csv_name}' using (strcol(1) eq '{s}' ? $7 : 1/0):8 with linespoints "
             f"title '{s}'" for s in schemes]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def write_outputs(rows: list[dict], csv_path) -> tuple[Path, Path]:
    csv_path = Path(csv_path)
    csv_path.write_text(rows_to_csv(rows))
    gp = csv_path.with_suffix(".gp")
    gp.write_text(gnuplot_script(rows, csv_path.name))
    return csv_path, gp


# ---------------------------------------------------------------------------
# table of slot counts


def reproduce_table1(rows=TABLE1_ROWS) -> list[dict]:
    """Greedy slot bound B_u versus the baseline slot count B_l per setting.

    ``users_per_slot_ratio`` is K/(t+alpha): how many times more users a
    greedy slot serves than a baseline slot.
    """
    out = []
    for K, t, s, beta, alpha in rows:
        bu = slots_upper_bound(K, t, s)
        bl = baseline_slot_count(K, t, alpha, beta)
        out.append({"K": K, "t": t, "s": s, "beta": beta, "alpha": alpha,
                    "users_per_slot_ratio": Fraction(K, t + alpha),
                    "B_u": bu, "B_l": bl, "ratio": round(bu / bl, 4)})
    return out


def format_table1(rows: list[dict]) -> str:
    head = f"{'K':>3} {'t':>2} {'s':>2} {'(b,a)':>7} {'K/(t+a)':>8} {'B_u':>5} {'B_l':>6} {'B_u/B_l':>8}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['K']:>3} {r['t']:>2} {r['s']:>2} {'(%d,%d)' % (r['beta'], r['alpha']):>7} "
                     f"{str(r['users_per_slot_ratio']):>8} {r['B_u']:>5} {r['B_l']:>6} {r['ratio']:>8.4f}")
    return "\n".join(lines) + "\n"
