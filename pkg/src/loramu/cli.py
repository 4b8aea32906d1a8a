"""Command-line entry point.

Subcommands: simulate, calibrate-threshold, power-control, sweep.  Each
writes a CSV report; --plot additionally renders a PNG figure next to it.
Flags override values from the JSON config file, which overrides defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import report
from .detector import active_bin_stats, calibrate_threshold, error_upper_bound
from .harness import (ExperimentConfig, _powers_at, _topology_at,
                      run_ser_experiment, sweep, write_ser_csv)
from .power_control import write_trace_csv


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


_FLAGS = [
    ("--sf", "sf", int),
    ("--bandwidth-hz", "bandwidth_hz", float),
    ("--noise-figure-db", "noise_figure_db", float),
    ("--n-gateways", "n_gateways", int),
    ("--n-devices", "n_devices", int),
    ("--n-antennas", "n_antennas", int),
    ("--trials", "trials", int),
    ("--seed", "seed", int),
    ("--alpha", "alpha", float),
    ("--detector", "detector", str),
    ("--n-topologies", "n_topologies", int),
    ("--shadowing-std-db", "shadowing_std_db", float),
    ("--noise-scale-db", "noise_scale_db", float),
]


def _add_common(sub):
    sub.add_argument("--config", help="JSON config file (ExperimentConfig keys)")
    sub.add_argument("--out", default=None, help="output CSV path")
    sub.add_argument("--plot", action="store_true",
                     help="render a PNG figure next to the CSV")
    for flag, dest, typ in _FLAGS:
        sub.add_argument(flag, dest=dest, type=typ, default=None)
    sub.add_argument("--snr-grid-db", dest="snr_grid_db", type=float,
                     nargs="+", default=None)
    sub.add_argument("--power-control", dest="power_control",
                     action="store_true", default=None)
    sub.add_argument("--no-power-control", dest="power_control",
                     action="store_false")
    sub.add_argument("--non-surjective", dest="surjective",
                     action="store_false", default=None)


def _config_from_args(args) -> ExperimentConfig:
    d = _load_config(args.config)
    fields = [f for _, f, _ in _FLAGS] + ["snr_grid_db", "power_control",
                                          "surjective"]
    for f in fields:
        v = getattr(args, f, None)
        if v is not None:
            d[f] = v
    if "snr_grid_db" in d:
        d["snr_grid_db"] = tuple(d["snr_grid_db"])
    return ExperimentConfig.from_dict(d)


def _fig_path(csv_path) -> str:
    return os.path.splitext(csv_path)[0] + ".png"


def cmd_simulate(args) -> int:
    cfg = _config_from_args(args)
    records = run_ser_experiment(cfg)
    out = args.out or "ser.csv"
    write_ser_csv(records, out)
    print(f"wrote {out} ({len(records)} records)")
    if args.plot:
        report.plot_ser_records(records, _fig_path(out))
        print(f"wrote {_fig_path(out)}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    records = sweep(cfg, args.axis, args.values)
    out = args.out or f"sweep_{args.axis}.csv"
    write_ser_csv(records, out)
    print(f"wrote {out} ({len(records)} records)")
    if args.plot:
        report.plot_ser_records(records, _fig_path(out))
        print(f"wrote {_fig_path(out)}")
    return 0


def cmd_calibrate_threshold(args) -> int:
    cfg = _config_from_args(args)
    snr_db = cfg.snr_grid_db[0]
    topo = _topology_at(cfg, 0)
    p = _powers_at(cfg, topo, snr_db)
    stats = active_bin_stats(topo, p, cfg.spreading, cfg.n_antennas)
    calib = calibrate_threshold(stats)
    lo = stats.n_gateways * stats.sigma2
    mean = stats.n_gateways * np.asarray(stats.mu, dtype=float)
    sd = np.sqrt(stats.n_gateways * np.asarray(stats.sigma2_g, dtype=float)
                 / stats.n_antennas)
    g = int(np.argmin(mean))
    hi = float(mean[g] + 10 * sd[g])
    grid = np.linspace(lo * (1 + 1e-9), hi, args.grid_points)
    vals = [error_upper_bound(x, stats) for x in grid]
    out = args.out or "threshold.csv"
    with open(out, "w", newline="") as fh:
        fh.write("p_th,p_error_ub\n")
        for x, v in zip(grid, vals):
            fh.write(f"{x:.12g},{v:.12g}\n")
    print(f"p_th = {calib.p_th:.6g}  bound = {calib.p_error_ub:.6g}")
    print(f"wrote {out}")
    if args.plot:
        report.plot_bound_curve(grid, vals, _fig_path(out), calib.p_th)
        print(f"wrote {_fig_path(out)}")
    return 0


def cmd_power_control(args) -> int:
    cfg = _config_from_args(args)
    snr_db = cfg.snr_grid_db[0]
    topo = _topology_at(cfg, 0)
    from .harness import calibrate_single_user_powers
    from .power_control import run_power_control
    p_su = calibrate_single_user_powers(topo, snr_db)
    p_max = float(p_su.max())
    scfg = cfg.spreading
    floor = (scfg.M * topo.beta * p_max
             / (cfg.n_gateways * topo.sigma2)).sum(axis=0)
    epsilon = cfg.snr_floor_fraction * float(floor.min())
    alloc, trace = run_power_control(topo, scfg, p_max, epsilon,
                                     alpha=cfg.alpha, tol=cfg.pc_tol,
                                     max_iter=cfg.pc_max_iter)
    out = args.out or "power_control.csv"
    write_trace_csv(trace, out)
    print("allocation (mW):", np.array2string(alloc.p, precision=6))
    print(f"wrote {out}")
    if args.plot:
        report.plot_sca_trace(trace, _fig_path(out))
        print(f"wrote {_fig_path(out)}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="loramu",
        description="Multiuser chirp-spread-spectrum uplink simulator")
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="Monte Carlo SER experiment")
    _add_common(sim)
    sim.set_defaults(func=cmd_simulate)

    sw = subs.add_parser("sweep", help="sweep one axis with common seeds")
    _add_common(sw)
    sw.add_argument("--axis", required=True,
                    choices=("n_antennas", "alpha", "snr"))
    sw.add_argument("--values", required=True, type=float, nargs="+")
    sw.set_defaults(func=cmd_sweep)

    cal = subs.add_parser("calibrate-threshold",
                          help="stage-1 threshold and bound curve")
    _add_common(cal)
    cal.add_argument("--grid-points", type=int, default=200)
    cal.set_defaults(func=cmd_calibrate_threshold)

    pc = subs.add_parser("power-control",
                         help="SCA power allocation and convergence trace")
    _add_common(pc)
    pc.set_defaults(func=cmd_power_control)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
