"""Command line entry point: ``cachebf <command> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 every trial failed.
"""
from __future__ import annotations

import argparse
import sys
from math import comb

from .beamforming import ChannelRealization, SCAConfig, sca_solve, to_dbw, verify_feasibility
from .caching import make_instance
from .errors import (BudgetViolationError, ConfigError, InitializationError, InputError,
                     InstanceTooLargeError, InvalidBaselineError)
from .scheduler import (ScheduleConfig, baseline_plan, baseline_slot_count, constraint_census,
                        dof_lower_bound, dof_of_plan, greedy_schedule, min_slots_exact,
                        plan_from_partition, slots_upper_bound)
from .sim import (CellConfig, Scheme, SweepSpec, draw_channels, format_table1, reproduce_table1,
                  run_sweep, trial_rng, write_outputs, rows_to_csv)
from .sparse import SparseConfig, solve_joint

EXIT_OK, EXIT_CONFIG, EXIT_ALL_FAILED = 0, 2, 3


def _add_instance(p, with_rate=True):
    p.add_argument("--K", type=int, required=True, help="number of users")
    p.add_argument("--N", type=int, required=True, help="number of files")
    p.add_argument("--M", type=int, required=True, help="cache size in files")
    if with_rate:
        p.add_argument("--N-T", dest="N_T", type=int, required=True, help="transmit antennas")
        p.add_argument("--R", type=float, required=True, help="file rate in bps/Hz")


def _add_channels(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--channels", help="JSON file with keys re, im, noise")
    g.add_argument("--seed", type=int, help="draw one cell realization with this seed")


def _channels(args):
    if args.channels:
        try:
            with open(args.channels) as fh:
                ch = ChannelRealization.from_json(fh.read())
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"cannot read channels from {args.channels}: {exc}") from None
        if ch.K != args.K or ch.N_T != args.N_T:
            raise InputError(f"channel file is {ch.K}x{ch.N_T}, expected {args.K}x{args.N_T}")
        return ch
    return draw_channels(CellConfig(), args.K, args.N_T, trial_rng(args.seed, 0))


def cmd_plan(args):
    R = 1.0 if args.R is None else args.R
    inst = make_instance(args.N, args.K, args.M, R, 1)
    if args.baseline_alpha is not None:
        plan = baseline_plan(inst, args.baseline_alpha)
        s = comb(inst.t + args.baseline_alpha - 1, inst.t)
    elif args.exact:
        _, slots = min_slots_exact(inst, args.s)
        plan = plan_from_partition(inst.K, inst.t, inst.R, slots, f"exact(s={args.s})")
        s = args.s
    else:
        plan = greedy_schedule(inst, ScheduleConfig(args.s, args.continue_scan, args.tie_break))
        s = args.s
    if args.json:
        print(plan.to_json())
        return EXIT_OK
    users = plan.message_targets
    print(f"{plan.label}: K={inst.K} t={inst.t} B={plan.num_slots} DoF={dof_of_plan(plan, s)}")
    census = constraint_census(plan, s)
    for i, sl in enumerate(plan.slots):
        msgs = " ".join("{" + ",".join(str(k + 1) for k in users(j)) + "}" for j in sl)
        print(f"  slot {i + 1} (n_i/n={plan.fractions[i]:.4f}, constraints={census['per_slot'][i]}): {msgs}")
    print(f"max messages per user and slot: {census['max_decode']}")
    return EXIT_OK


def cmd_bounds(args):
    bu = slots_upper_bound(args.K, args.t, args.s)
    print(f"B_u={bu}")
    print(f"DoF_lower={dof_lower_bound(args.K, args.t, args.s)}")
    if args.alpha is not None:
        beta = args.alpha if args.beta is None else args.beta
        bl = baseline_slot_count(args.K, args.t, args.alpha, beta)
        print(f"B_l={bl}")
        print(f"B_u/B_l={bu / bl:.4f}")
    return EXIT_OK


def cmd_table1(args):
    print(format_table1(reproduce_table1()), end="")
    return EXIT_OK


def cmd_solve(args):
    ch = _channels(args)
    inst = make_instance(args.N, args.K, args.M, args.R, args.N_T, ch.noise)
    scheme = Scheme.parse(args.scheme)
    if scheme.kind == "joint":
        raise ConfigError("use the joint command for the joint optimizer")
    plan = scheme.plan(inst)
    cfg = SCAConfig(init=args.init, rate_mode=args.rate_mode, max_iter=args.max_iter)
    sol = sca_solve(plan, ch, cfg)
    if sol.status == "failed":
        print(f"{plan.label}: infeasible ({sol.slot_status})")
        return EXIT_ALL_FAILED
    rep = verify_feasibility(sol, plan, ch)
    print(f"{plan.label}: P={to_dbw(sol.power):.4f} dBW status={sol.status} "
          f"iterations={sol.iterations} worst_margin={rep.worst['mac']:.3e}")
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(sol.trace_csv())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(sol.to_json())
    return EXIT_OK


def cmd_joint(args):
    ch = _channels(args)
    inst = make_instance(args.N, args.K, args.M, args.R, args.N_T, ch.noise)
    res = solve_joint(ch, inst, SparseConfig(args.s, args.B, args.xi, args.eps_rate))
    print(f"joint(s={args.s},B={args.B}): P={to_dbw(res.solution.power):.4f} dBW "
          f"relaxed={to_dbw(res.relaxed_power):.4f} dBW status={res.status}")
    users = res.plan.message_targets
    for i, sl in enumerate(res.plan.slots):
        msgs = " ".join("{" + ",".join(str(k + 1) for k in users(j)) + "}" for j in sl)
        print(f"  slot {i + 1}: {msgs}")
    if args.plan_out:
        with open(args.plan_out, "w") as fh:
            fh.write(res.plan.to_json())
    return EXIT_OK


def cmd_sweep(args):
    spec = SweepSpec.from_toml(args.spec)
    if args.trials is not None:
        spec = SweepSpec(**{**spec.__dict__, "trials": args.trials})
    rows = run_sweep(spec)
    if args.out:
        csv_path, gp = write_outputs(rows, args.out)
        print(f"wrote {csv_path} and {gp}")
    else:
        print(rows_to_csv(rows), end="")
    if all(r["trials_ok"] == 0 for r in rows):
        return EXIT_ALL_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cachebf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="build a delivery plan")
    _add_instance(p, with_rate=False)
    p.add_argument("--s", type=int, default=1, help="messages a user may decode per slot")
    p.add_argument("--R", type=float, default=None)
    p.add_argument("--exact", action="store_true", help="minimum-slot partition (small K)")
    p.add_argument("--baseline-alpha", type=int, default=None)
    p.add_argument("--continue-scan", action="store_true")
    p.add_argument("--tie-break", default="fit", choices=("fit", "lex"))
    p.add_argument("--json", action="store_true", help="print the plan as JSON")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bounds", help="slot and DoF bounds")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--alpha", type=int, default=None)
    p.add_argument("--beta", type=int, default=None)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("table1", help="slot counts of the greedy bound and the baseline")
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("solve", help="minimum-power beamformers for one plan")
    _add_instance(p)
    _add_channels(p)
    p.add_argument("--scheme", default="greedy:s=1")
    p.add_argument("--init", default="zf", choices=("zf", "sdr"))
    p.add_argument("--rate-mode", default="fixed", choices=("fixed", "variable"))
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--trace", help="write the iteration trace as CSV")
    p.add_argument("--out", help="write the solution as JSON")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("joint", help="joint pattern and beamformer optimization")
    _add_instance(p)
    _add_channels(p)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--xi", type=float, default=None)
    p.add_argument("--eps-rate", type=float, default=None)
    p.add_argument("--plan-out", help="write the induced plan as JSON")
    p.set_defaults(func=cmd_joint)

    p = sub.add_parser("sweep", help="Monte Carlo power-versus-rate sweep")
    p.add_argument("--spec", required=True, help="TOML sweep configuration")
    p.add_argument("--out", help="CSV output path (a .gp script is written next to it)")
    p.add_argument("--trials", type=int, default=None, help="override the trial count")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, InvalidBaselineError, InstanceTooLargeError,
            BudgetViolationError, InitializationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
