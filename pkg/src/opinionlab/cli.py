"""Command-line entry points: run, validate, audit, plot.

Exit code 0 means the verdict passed (run/audit), the config is clean
(validate), or the plots were written (plot).  Worker count for Monte
Carlo replications comes from the OPINIONLAB_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .audit import (
    LyapunovConfig,
    audit_a2_trajectory,
    audit_a3_trajectory,
    beta_reduction,
    check_variation_bound,
    eps_degroot_params,
    lyapunov_series,
)
from .experiments import load_config, run_scenario, validate
from .plots import emit_plots
from .recording import load_trajectory, write_json


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.output:
        config = replace(config, output_dir=args.output)
    result = run_scenario(config)
    for audit in result.audits:
        status = "pass" if audit.passed else "FAIL"
        print(f"[{status}] {result.scenario}/{audit.condition}"
              f" worst_violation={audit.worst_violation:.3g}")
    print(f"scenario {result.scenario}: {'PASS' if result.passed else 'FAIL'}")
    if config.output_dir:
        print(f"results written to {config.output_dir}")
        if args.plots:
            for f in emit_plots(config.output_dir):
                print(f"plot: {f}")
    return 0 if result.passed else 1


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    diags = validate(config)
    if not diags:
        print("config OK")
        return 0
    for d in diags:
        print(f"error: {d}")
    return 1


def _cmd_audit(args) -> int:
    opinions, g, meta = load_trajectory(args.trajectory)
    with open(args.params) as fh:
        p = json.load(fh)
    eps = float(p["eps"])
    gamma = float(p["gamma"])
    beta = float(p.get("beta", 0.0))
    params = eps_degroot_params(eps, gamma)
    if beta > 0:
        params = beta_reduction(params, beta)
    bots = [int(i) for i, _ in meta.get("config", {}).get("bots", [])]
    centers = [int(c) for c in p.get("centers", [0])]

    reports = [
        audit_a2_trajectory(g, opinions, eps + beta, skip=bots),
        audit_a3_trajectory(g, opinions, params, skip=bots),
    ]
    T = opinions.shape[0] - 1
    for c in centers:
        ls = lyapunov_series(g, LyapunovConfig(center=c, ratio=1.0 - params.gamma),
                             opinions)
        slack = 1e-9 * g.weight_mass(c, 1.0 - params.gamma)
        mono = float(np.max(np.diff(ls))) if ls.size >= 2 else 0.0
        from .audit import AuditReport
        reports.append(AuditReport("Lyapunov", mono <= slack, max(mono, 0.0),
                                   details={"center": c}))
        reports.append(check_variation_bound(g, c, params.gamma, params.eta,
                                             opinions, 0, T))
    for r in reports:
        status = "pass" if r.passed else "FAIL"
        print(f"[{status}] {r.condition} worst_violation={r.worst_violation:.3g}"
              + (f" witness={r.witness}" if r.witness else ""))
    if args.out:
        write_json(args.out, [r.to_dict() for r in reports])
        print(f"report written to {args.out}")
    return 0 if all(r.passed for r in reports) else 1


def _cmd_plot(args) -> int:
    files = emit_plots(args.result_dir, args.out)
    for f in files:
        print(f"plot: {f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="opinionlab",
        description="Opinion-dynamics experiments: run scenarios, validate "
                    "configs, audit trajectories, render plots.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario config")
    p_run.add_argument("config")
    p_run.add_argument("--output", help="override the output directory")
    p_run.add_argument("--plots", action="store_true", help="also render plots")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_aud = sub.add_parser("audit", help="audit a recorded trajectory file")
    p_aud.add_argument("trajectory", help=".npz trajectory bundle")
    p_aud.add_argument("params", help="JSON with eps, gamma, optional beta/centers")
    p_aud.add_argument("--out", help="write the audit report JSON here")
    p_aud.set_defaults(func=_cmd_audit)

    p_plot = sub.add_parser("plot", help="render plots from a result directory")
    p_plot.add_argument("result_dir")
    p_plot.add_argument("--out", help="directory for the image files")
    p_plot.set_defaults(func=_cmd_plot)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
