"""Command-line front end: det | stoch | sweep | validate | fit."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .deterministic import DeterministicState, run_det, write_summary_csv, write_trajectory_csv
from .harness import RunConfig, fit_rate, read_results, run_sweep
from .stochastic import (
    StochasticState,
    init_channels,
    make_rng,
    replicate_seed_sequence,
    run_stoch,
    write_jump_csv,
    write_run_manifest,
    write_voltage_csv,
)
from .validate import SUITES, default_workers


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig.from_dict({})
    if args.seed is not None:
        data = dict(cfg.raw)
        data["seed"] = args.seed
        cfg = RunConfig.from_dict(data)
    if getattr(args, "refine", False):
        cfg = cfg.refined()
    if getattr(args, "out", None) is None and hasattr(args, "out"):
        args.out = cfg.out_dir
    return cfg


def _cmd_det(args) -> int:
    cfg = _load_config(args)
    grid, kin, v0, p0 = cfg.build()
    init = DeterministicState(t=0.0, v=v0, p=np.stack([f.values for f in p0]))
    traj = run_det(init, cfg.time_horizon, cfg.dt, kin)
    os.makedirs(args.out, exist_ok=True)
    write_trajectory_csv(traj, os.path.join(args.out, "det_trajectory.csv"),
                         stride=args.stride)
    write_summary_csv(traj, os.path.join(args.out, "det_summary.csv"))
    print(f"deterministic run: {traj.n_times} samples, "
          f"dissipation {traj.dissipation[-1]:.6f}, sup|v| {traj.sup_v_inf:.6f}")
    return 0


def _cmd_stoch(args) -> int:
    cfg = _load_config(args)
    grid, kin, v0, p0 = cfg.build()
    n_scale = args.n or cfg.sweep_n[0]
    seq = replicate_seed_sequence(cfg.seed, n_scale, args.replicate)
    rng = make_rng(seq)
    channels = init_channels(n_scale, p0, cfg.init_mode, rng)
    traj = run_stoch(StochasticState(t=0.0, v=v0, channels=channels),
                     cfg.time_horizon, cfg.dt, kin, rng)
    os.makedirs(args.out, exist_ok=True)
    write_voltage_csv(traj, os.path.join(args.out, "stoch_voltage.csv"),
                      stride=args.stride)
    write_jump_csv(traj, os.path.join(args.out, "stoch_jumps.csv"),
                   state_names=kin.states)
    write_run_manifest(traj, os.path.join(args.out, "stoch_manifest.json"),
                       config_digest=cfg.digest())
    if args.diagnostics:
        from .decomposition import write_martingale_norm_csv

        write_martingale_norm_csv(traj, kin, grid,
                                  os.path.join(args.out, "stoch_mart_norms.csv"))
    print(f"stochastic run: N={n_scale}, {traj.positions.size} channels, "
          f"{traj.jump_times.size} jumps, sup|V| {traj.sup_v_inf:.6f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    rows = run_sweep(cfg, args.out, workers=args.workers,
                     save_trajectories=args.save_trajectories)
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"sweep complete: {len(rows)} replicates, {len(failed)} flagged; "
          f"results in {os.path.join(args.out, 'results.csv')}")
    return 0 if not failed else 1


def _cmd_validate(args) -> int:
    suite = SUITES[args.suite]
    kwargs = {}
    if args.suite == "martingale":
        kwargs = {"replicates": args.replicates or 2000, "workers": args.workers,
                  "report_path": args.report}
    elif args.suite == "likelihood":
        kwargs = {"paths": args.replicates or 10_000}
    checks = suite(**kwargs)
    worst = True
    for name, passed, detail in checks:
        tag = "PASS" if passed else "FAIL"
        print(f"[{tag}] {name}: {detail}")
        worst = worst and passed
    return 0 if worst else 1


def _cmd_fit(args) -> int:
    rows = read_results(args.results)
    slope, intercept, resid = fit_rate(rows, args.metric)
    print(json.dumps({"metric": args.metric, "slope": slope,
                      "intercept": intercept, "rms_residual": resid}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="axonsim",
        description="Hybrid stochastic/deterministic axon model simulator",
    )
    p.add_argument("--version", action="version", version=f"axonsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override base seed")
        sp.add_argument("--refine", action="store_true",
                        help="double cells, halve dt")
        if out:
            sp.add_argument("--out", default=None,
                            help="output directory (default: config out_dir)")

    sp = sub.add_parser("det", help="one deterministic (fluid-model) run")
    common(sp)
    sp.add_argument("--stride", type=int, default=1, help="snapshot stride for CSV")
    sp.set_defaults(func=_cmd_det)

    sp = sub.add_parser("stoch", help="one stochastic (particle-model) run")
    common(sp)
    sp.add_argument("--n", type=int, default=None, help="channel scale N")
    sp.add_argument("--replicate", type=int, default=0, help="replicate index")
    sp.add_argument("--stride", type=int, default=1, help="snapshot stride for CSV")
    sp.add_argument("--diagnostics", action="store_true",
                    help="also write the martingale dual-norm series CSV")
    sp.set_defaults(func=_cmd_stoch)

    sp = sub.add_parser("sweep", help="full convergence study")
    common(sp)
    sp.add_argument("--workers", type=int, default=1, help="parallel workers")
    sp.add_argument("--save-trajectories", action="store_true",
                    help="write per-replicate voltage CSVs")
    sp.set_defaults(func=_cmd_sweep)

    sp = sub.add_parser("validate", help="oracle suites")
    sp.add_argument("--suite", choices=sorted(SUITES), required=True)
    sp.add_argument("--replicates", type=int, default=None,
                    help="override replicate/path count")
    sp.add_argument("--workers", type=int, default=default_workers())
    sp.add_argument("--report", default=None,
                    help="write suite statistics as JSON (martingale suite)")
    sp.set_defaults(func=_cmd_validate)

    sp = sub.add_parser("fit", help="log-log rate fit on a results CSV")
    sp.add_argument("--results", required=True, help="path to results.csv")
    sp.add_argument("--metric", default="dev_l2", help="column to fit")
    sp.set_defaults(func=_cmd_fit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
