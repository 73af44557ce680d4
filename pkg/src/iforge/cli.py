"""Command-line front end.

Subcommands: synthesize (run the SOS pipeline and write a certificate),
verify (re-check a certificate against a config), simulate (closed loop
with trace and panel exports), oracle (cross-validate the cruise-control
barrier against its brute-force definition).

Exit codes: 0 success / properties hold; 1 property violation; 2
infeasible synthesis; 3 unreadable or malformed input.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import acc_barrier, lk_synthesis, simulator
from .config import Config, ConfigError, load_config, write_default_config
from .riccati import lk_nominal_gain
from .safety_filter import lk_nominal
from .sosprog import SosInfeasibleError

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INFEASIBLE = 2
EXIT_BAD_INPUT = 3


def _load(args) -> Config:
    return load_config(getattr(args, "config", None))


def cmd_synthesize(args) -> int:
    cfg = _load(args)
    syn = cfg.synthesis_config()
    try:
        cert = lk_synthesis.synthesize(syn, log=lambda m: print(m, file=sys.stderr))
        cert = lk_synthesis.maximize_certificate_gamma(cert, syn)
    except SosInfeasibleError as exc:
        print(f"synthesis infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    report = lk_synthesis.verify_lk_properties(cert, syn, seed=args.seed)
    cert.save(args.out)
    print(f"certificate written to {args.out}")
    print("kappa trajectory: " + " ".join(f"{k:.6f}" for k in cert.kappa_history))
    print(f"iterations: {cert.iterations}")
    print(f"gamma (synthesis): {cert.gamma_synth:g}")
    print(f"gamma* (maximized): {cert.gamma_max:g}")
    print(f"verification: {'pass' if report.passed else 'FAIL'} "
          f"(worst sampled row {report.worst_row:.3e})")
    return EXIT_OK if report.passed else EXIT_VIOLATION


def cmd_verify(args) -> int:
    cfg = _load(args)
    try:
        cert = lk_synthesis.BarrierCertificate.load(args.certificate)
    except (OSError, KeyError, ValueError) as exc:
        print(f"cannot parse certificate: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    syn = cfg.synthesis_config()
    rep = lk_synthesis.verify_lk_properties(cert, syn, seed=args.seed)
    print(f"lk blocks: {'pass' if rep.blocks_ok else 'FAIL ' + str(rep.block_failures)}")
    print(f"lk containment: {'pass' if rep.containment_ok else 'FAIL'}")
    if rep.containment_witness is not None:
        print(f"  witness (scaled state): {rep.containment_witness}")
    print(f"lk barrier row: {'pass' if rep.row_ok else 'FAIL'} "
          f"(worst {rep.worst_row:.3e} over {rep.checked_points} samples)")
    if rep.row_witness is not None:
        print(f"  witness: state={rep.row_witness[0]} d={rep.row_witness[1]:.4f} "
              f"v={rep.row_witness[2]:.3f} row={rep.row_witness[3]:.3e}")

    acc_params = cfg.acc_params()
    barrier = acc_barrier.build_barrier(acc_params, gain=cfg["gains"]["gamma2"])
    acc_rep = acc_barrier.verify_acc_properties(barrier, acc_params)
    print(f"acc properties: {'pass' if acc_rep.passed else 'FAIL'} "
          f"(worst margin {acc_rep.max_margin_violation:.3e}, "
          f"worst row {acc_rep.worst_row:.3e})")
    for w in acc_rep.witnesses if not acc_rep.passed else []:
        print(f"  witness: {w}")
    ok = rep.passed and acc_rep.passed
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_simulate(args) -> int:
    cfg = _load(args)
    try:
        cert = lk_synthesis.BarrierCertificate.load(args.certificate)
    except (OSError, KeyError, ValueError) as exc:
        print(f"cannot parse certificate: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    params = cfg.vehicle_params()
    bounds = cfg.lk_bounds()
    gains = cfg.filter_gains()
    acc_params = cfg.acc_params()
    barrier = acc_barrier.build_barrier(acc_params, gain=gains.gamma2)
    syn = cfg["synthesis"]
    lqr = lk_nominal_gain(params, syn["v_nominal"], syn["k_p"], syn["k_d"],
                          syn["r_weight"])
    nominal = lk_nominal(lqr.K)
    if gains.gamma1 > cert.gamma_max or gains.gamma1 < cert.gamma_synth:
        print(f"warning: runtime gamma1={gains.gamma1:g} outside the certified "
              f"band [{cert.gamma_synth:g}, {cert.gamma_max:g}]", file=sys.stderr)

    scenario = cfg.scenario()
    trace = simulator.run_closed_loop(scenario, cert, barrier, nominal, gains,
                                      params, bounds, acc_params)
    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, "trace.csv")
    trace.to_csv(trace_path)
    simulator.write_panels(trace, args.out, params, bounds, acc_params, gains)
    summary = trace.summary(params)
    print(f"trace written to {trace_path} ({summary['samples']} samples)")
    for key in ("min_h_lk", "min_h_acc", "max_abs_u1", "max_abs_u2_over_mg",
                "min_headway"):
        print(f"{key}: {summary[key]:.6g}")
    print(f"assumption violations: {summary['assumption_violations']}")
    print(f"guarantee violations (unexcused): {summary['guarantee_violations']}")
    print(f"excused violations: {summary['excused_violations']}")
    if summary["assumption_violations"]:
        firsts = trace.assumption_violations()[:3]
        for v in firsts:
            print("note: " + v.describe())
    if trace.truncated:
        print("trace truncated by filter infeasibility", file=sys.stderr)
    return EXIT_VIOLATION if summary["guarantee_violations"] else EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load(args)
    acc_params = cfg.acc_params()
    barrier = acc_barrier.build_barrier(acc_params, gain=cfg["gains"]["gamma2"])
    n = args.grid
    worst = 0.0
    for vf in np.linspace(0.0, acc_params.v_high, n):
        for vl in np.linspace(0.0, acc_params.v_high, n):
            dev = abs(barrier.value((vf, vl))
                      - acc_barrier.worst_case_oracle(vf, vl, acc_params, grid=800))
            worst = max(worst, dev)
    ok_traj, min_slack = acc_barrier.worst_case_headway_check(acc_params, barrier)
    print(f"grid {n}x{n} sup deviation closed-form vs oracle: {worst:.3e}")
    print(f"worst-case closed-loop headway slack: {min_slack:.6g} m")
    if args.dump_grid:
        acc_barrier.margin_grid_csv(barrier, acc_params, args.dump_grid, grid=n)
        print(f"margin grid written to {args.dump_grid}")
    ok = worst <= 1e-6 and ok_traj
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_init_config(args) -> int:
    write_default_config(args.out)
    print(f"default config written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="iforge",
        description="barrier-certificate synthesis and QP safety filtering "
                    "for coupled lane keeping / adaptive cruise control")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="run the SOS pipeline, write a certificate")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default="certificate.txt")
    p.add_argument("--seed", type=int, default=0, help="verification sampling seed")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("verify", help="re-check a certificate and the ACC barrier")
    p.add_argument("--config", default=None)
    p.add_argument("--certificate", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="closed-loop run with trace export")
    p.add_argument("--config", default=None)
    p.add_argument("--certificate", required=True)
    p.add_argument("--out", default="simout")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", help="cross-validate the ACC barrier margins")
    p.add_argument("--config", default=None)
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--dump-grid", default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("init-config", help="write the default config file")
    p.add_argument("--out", default="iforge.ini")
    p.set_defaults(func=cmd_init_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
