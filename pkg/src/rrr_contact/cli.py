"""Command-line entry point: ``rrr-contact {sim,batch,identify,replay,plot}``."""
import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import simulation as simmod
from .config import load_scenario
from .errors import ConfigError, InsufficientExcitation, SchemaMismatch
from .identification import fit_torque_constant, read_calibration_csv, write_fit_report
from .observers import OBSERVER_IDS
from .svgplot import line_chart

OUT_ENV = "RRR_CONTACT_OUT"

EXIT_OK = 0
EXIT_ABORTED = 1
EXIT_USAGE = 2


def _error(msg):
    print(f"error: {msg}", file=sys.stderr)


def _out_dir(arg, name):
    if arg:
        return Path(arg)
    root = os.environ.get(OUT_ENV)
    if not root:
        raise ConfigError("--out", f"no output directory given and {OUT_ENV} is unset")
    return Path(root) / name


def _parse_observers(text):
    if text is None:
        return None
    names = [s.strip() for s in text.split(",") if s.strip()]
    for name in names:
        if name not in OBSERVER_IDS:
            raise ConfigError("--observers", f"unknown observer {name!r}")
    return names


def run_scenario_file(scenario, out, seed=None, observers=None):
    """Simulate one scenario file and write log, events and summary CSVs."""
    sc = load_scenario(scenario, seed=seed, observers=observers)
    out = _out_dir(out, Path(scenario).stem)
    out.mkdir(parents=True, exist_ok=True)
    log = simmod.run(sc)
    log.write_csv(out / "log.csv")
    log.write_events(out / "events.csv")
    simmod.write_summary(simmod.summarize(log, sc), out / "summary.csv")
    return out, log.meta.get("aborted")


def cmd_sim(args):
    try:
        out, aborted = run_scenario_file(args.scenario, args.out, args.seed,
                                         _parse_observers(args.observers))
    except ConfigError as exc:
        _error(exc)
        return EXIT_USAGE
    if aborted:
        _error(f"run aborted ({aborted}); partial log in {out}")
        return EXIT_ABORTED
    print(out)
    return EXIT_OK


def _batch_job(job):
    scenario, out, seed, observers = job
    try:
        path, aborted = run_scenario_file(scenario, out, seed, observers)
    except ConfigError as exc:
        return scenario, None, str(exc)
    return scenario, str(path), aborted


def cmd_batch(args):
    try:
        observers = _parse_observers(args.observers)
        root = Path(args.out) if args.out else _out_dir(None, "batch")
    except ConfigError as exc:
        _error(exc)
        return EXIT_USAGE
    jobs = [(s, root / Path(s).stem, args.seed, observers) for s in args.scenarios]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_batch_job, jobs))
    else:
        results = [_batch_job(j) for j in jobs]
    status = EXIT_OK
    for scenario, path, problem in results:
        if path is None:
            _error(f"{scenario}: {problem}")
            status = EXIT_USAGE
        elif problem:
            _error(f"{scenario}: run aborted ({problem})")
            status = max(status, EXIT_ABORTED)
        else:
            print(path)
    return status


def cmd_identify(args):
    try:
        samples = read_calibration_csv(args.inp)
        fit = fit_torque_constant(samples)
    except (OSError, SchemaMismatch, InsufficientExcitation) as exc:
        _error(exc)
        return EXIT_USAGE
    write_fit_report(fit, args.out)
    for a in range(3):
        print(f"axis {a + 1}: k_t = {fit.k_t[a]:.4f} N*m/A, rmse = {fit.rmse[a]:.4f} N*m")
    return EXIT_OK


def cmd_replay(args):
    try:
        sc = load_scenario(args.config)
        log = simmod.RunLog.read_csv(args.log)
    except (OSError, ConfigError, SchemaMismatch) as exc:
        _error(exc)
        return EXIT_USAGE
    est = simmod.replay_estimates(log, sc)
    out = args.out or str(Path(args.log).with_name("estimates.csv"))
    simmod.write_estimates(log.column("t"), est, out)
    print(out)
    return EXIT_OK


def plot_panels(log):
    """SVG text for the force, position and velocity panels of a run."""
    t = log.column("t")
    F = log.block("Fext")
    axis = int(np.argmax(np.nanmax(np.abs(F[:, :2]), axis=0))) if np.any(F[:, :2]) else 1
    ax = simmod.WRENCH_AXES[axis]
    forces = [(f"{ax} true", F[:, axis])]
    for name in OBSERVER_IDS:
        est = log.column(f"F_{name}_{ax}")
        if not np.all(np.isnan(est)):
            forces.append((f"{ax} {name}", est))
    positions = [(f"r{c}", log.column(f"x_r{c}")) for c in "xy"]
    positions += [(f"r{c} desired", log.column(f"xd_r{c}")) for c in "xy"]
    velocities = [(f"r{c} rate", log.column(f"xdot_r{c}")) for c in "xy"]
    return {
        "forces.svg": line_chart(t, forces, "External force: measured and estimated", "N"),
        "positions.svg": line_chart(t, positions, "Platform position", "m"),
        "velocities.svg": line_chart(t, velocities, "Platform velocity", "m/s"),
    }


def cmd_plot(args):
    try:
        log = simmod.RunLog.read_csv(args.log)
    except (OSError, SchemaMismatch) as exc:
        _error(exc)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, svg in plot_panels(log).items():
        (out / name).write_text(svg)
        print(out / name)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="rrr-contact", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sim", help="simulate one scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<scenario>)")
    s.add_argument("--seed", type=int)
    s.add_argument("--observers", help="comma-separated subset of mo,kf,sosml")
    s.set_defaults(func=cmd_sim)

    b = sub.add_parser("batch", help="simulate several scenarios")
    b.add_argument("scenarios", nargs="+")
    b.add_argument("--out", help=f"output root (default ${OUT_ENV}/batch)")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--seed", type=int)
    b.add_argument("--observers")
    b.set_defaults(func=cmd_batch)

    i = sub.add_parser("identify", help="fit motor torque constants")
    i.add_argument("--in", dest="inp", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_identify)

    r = sub.add_parser("replay", help="re-run observers on a logged run")
    r.add_argument("--log", required=True)
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="estimates CSV (default: estimates.csv next to the log)")
    r.set_defaults(func=cmd_replay)

    pl = sub.add_parser("plot", help="render SVG panels of a logged run")
    pl.add_argument("--log", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
