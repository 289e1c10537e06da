"""Command line interface: ``simulate``, ``estimate``, ``sweep`` and ``ls``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from .errors import MmwaveNbpError
from .experiment import export_report, run_experiment
from .geometry import NoiseSpec, Observations, PathTriple, StateVector, sample_observations
from .ls_baseline import TrialGrid, grid_search
from .nbp import message_dumper, run as run_engine

log = logging.getLogger("mmwave_nbp")

OBS_COLUMNS = ["path", "d_m", "theta_tx_rad", "theta_rx_rad", "sigma_d_m", "sigma_tx_rad",
               "sigma_rx_rad"]


def write_observations(obs: Observations, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(OBS_COLUMNS)
    n = obs.noise
    for j, t in enumerate(obs.triplets):
        w.writerow([j] + [repr(float(v)) for v in (t.d, t.theta_tx, t.theta_rx, n.sigma_d[j],
                                                     n.sigma_tx[j], n.sigma_rx[j])])


def read_observations(path) -> Observations:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    missing = set(OBS_COLUMNS) - set(rows[0] if rows else {})
    if missing:
        raise cfgmod.ConfigError(f"{path}: missing columns {sorted(missing)}")
    rows.sort(key=lambda r: int(r["path"]))
    triplets = tuple(PathTriple(float(r["d_m"]), float(r["theta_tx_rad"]),
                                float(r["theta_rx_rad"])) for r in rows)
    noise = NoiseSpec(tuple(float(r["sigma_d_m"]) for r in rows),
                      tuple(float(r["sigma_tx_rad"]) for r in rows),
                      tuple(float(r["sigma_rx_rad"]) for r in rows))
    return Observations(triplets, noise)


def _config(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    if getattr(args, "paper_scale", False):
        log.warning("paper-scale preset: 1000 trials x 10000 particles per noise level; "
                    "expect many hours of CPU time")
        cfg = cfgmod.paper_scale(cfg)
    engine = cfg.engine
    if getattr(args, "particles", None) is not None:
        engine = replace(engine, n_particles=args.particles)
    if getattr(args, "iterations", None) is not None:
        engine = replace(engine, n_iterations=args.iterations)
    top = {}
    if getattr(args, "seed", None) is not None:
        top["master_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        top["n_trials"] = args.trials
    if getattr(args, "out", None) is not None:
        top["output_dir"] = Path(args.out)
    if getattr(args, "noise_deg", None) is not None:
        top["noise_deg"] = tuple(args.noise_deg)
    try:
        return replace(cfg, engine=engine, **top)
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc)) from exc


def _single_observation(args, cfg) -> Observations:
    if getattr(args, "observations", None):
        return read_observations(args.observations)
    noise = NoiseSpec.uniform(cfg.scenario.n_paths, cfg.sigma_d, math.radians(cfg.noise_deg[0]))
    return sample_observations(cfg.scenario, noise, cfg.master_seed)


def _print_state(label: str, est: StateVector, out=None) -> None:
    out = out or sys.stdout
    p = est.mobile.position
    print(f"{label}: p = ({p.x:.3f}, {p.y:.3f}) m, "
          f"alpha = {math.degrees(est.mobile.orientation):.3f} deg", file=out)
    for j, s in enumerate(est.incidence_points):
        print(f"  s{j} = ({s[0]:.3f}, {s[1]:.3f}) m", file=out)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    obs = _single_observation(args, cfg)
    if args.out:
        path = Path(args.out)
        if path.suffix != ".csv":
            path.mkdir(parents=True, exist_ok=True)
            path = path / "observations.csv"
        with open(path, "w", newline="") as fh:
            write_observations(obs, fh)
        print(f"wrote {path}")
    else:
        write_observations(obs, sys.stdout)
    return 0


def cmd_estimate(args) -> int:
    cfg = _config(args)
    obs = _single_observation(args, cfg)
    dumper = None
    if args.dump_messages:
        out = Path(args.out or cfg.output_dir) / "messages"
        dumper = message_dumper(out, iterations=tuple(args.dump_iterations))
    engine = replace(cfg.engine, seed=cfg.master_seed)
    res = run_engine(obs, cfg.scenario.base_station, engine, on_message=dumper)
    for it, est in enumerate(res.trace, 1):
        _print_state(f"iteration {it}", est)
    if res.flags:
        print(f"degenerate-weight events: {len(res.flags.events)} "
              f"({res.flags.fallbacks} fallbacks)")
    return 0


def cmd_ls(args) -> int:
    cfg = _config(args)
    obs = _single_observation(args, cfg)
    est = grid_search(obs, cfg.scenario.base_station, TrialGrid(cfg.ls_delta_alpha))
    _print_state("least squares", est)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    total = len(cfg.noise_deg) * cfg.n_trials
    done = [0]
    t0 = time.monotonic()

    def progress(_):
        done[0] += 1
        if args.verbose or done[0] == total:
            log.info("trial %d/%d (%.0f s)", done[0], total, time.monotonic() - t0)

    report = run_experiment(cfg, progress)
    paths = export_report(report, cfg.output_dir)
    for deg, est, p, a, s in report.noise_rows:
        print(f"{deg:g} deg {est:>3}: rmse_p = {p:.3f} m, rmse_alpha = {math.degrees(a):.3f} deg, "
              f"rmse_s = {s:.3f} m")
    for path in paths:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="dotted key=value config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--trials", type=int, help="Monte Carlo trials per noise level")
    common.add_argument("--particles", type=int, help="particles per message (N_s)")
    common.add_argument("--iterations", type=int, help="flooding iterations")
    common.add_argument("--out", help="output directory (or .csv file for simulate)")
    common.add_argument("--paper-scale", action="store_true",
                        help="1000 trials with 10000 particles")
    common.add_argument("--noise-deg", type=float, nargs="+",
                        help="angular noise sweep in degrees")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mmwave-nbp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="emit an observations CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", parents=[common], help="single NBP run")
    p.add_argument("--observations", help="observations CSV (default: simulate one)")
    p.add_argument("--dump-messages", action="store_true",
                   help="write msg_<from>_<to>_iter<l>.csv files")
    p.add_argument("--dump-iterations", type=int, nargs="+", default=[1, 5])
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", parents=[common], help="Monte Carlo experiment")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ls", parents=[common], help="least-squares baseline only")
    p.add_argument("--observations", help="observations CSV (default: simulate one)")
    p.set_defaults(func=cmd_ls)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MmwaveNbpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
