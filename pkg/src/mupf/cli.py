"""
Command-line front end.

Exit codes: 0 success, 1 config error, 2 degeneracy under the abort
policy, 3 I/O or input-file error.
"""

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import filter as pf
from . import io
from .gnss import Band, ObservationError, pseudorange_fix
from .harness import (
    ConfigError,
    run_kinematic,
    run_particle_sweep,
    run_static_battery,
    simulate_trajectory,
)
from .scene import SELECTORS, Scene, SceneError, grid_likelihood_map

log = logging.getLogger("mupf")

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERACY, EXIT_IO = 0, 1, 2, 3
DEFAULT_COUNTS = (100, 500, 1000, 2000)


def _floats(n):
    def parse(text):
        try:
            vals = tuple(float(v) for v in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}") from None
        if len(vals) == 1 and n == 3:
            vals = vals * 3
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        return vals
    return parse


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _common(p):
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    p.add_argument("-v", "--verbose", action="store_true")


def _battery_flags(p):
    p.add_argument("--trials", type=int, dest="n_trials")
    p.add_argument("--epochs", type=int, dest="epochs_per_trial")
    p.add_argument("--particles", type=int, dest="n_particles")
    p.add_argument("--strategies", help="comma-separated subset of " + ",".join(pf.STRATEGIES))
    p.add_argument("--prior-sigma", type=_floats(3), help="per-axis prior sigma [m]")
    p.add_argument("--process-noise", type=float)
    p.add_argument("--fixed-threshold", type=float, help="fixed-rate threshold [m]")
    p.add_argument("--policy", choices=pf.DEGENERACY_POLICIES, help="degeneracy policy")
    p.add_argument("--workers", type=int, default=1, help="worker processes for trials")


def build_parser():
    parser = argparse.ArgumentParser(prog="mupf", description="Multiple-update particle filter experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("static-battery", help="static convergence battery")
    _common(p)
    _battery_flags(p)

    p = sub.add_parser("particle-sweep", help="static battery over several particle counts")
    _common(p)
    _battery_flags(p)
    p.add_argument("--counts", help="comma-separated particle counts")

    p = sub.add_parser("kinematic", help="multiple-update filtering of an epoch file")
    _common(p)
    p.add_argument("--epochs-file", type=Path, required=True, help="JSON-lines epoch file")
    p.add_argument("--velocities", type=Path, required=True,
                   help="CSV with time,vx,vy,vz and optional truth x,y,z (ECEF)")
    p.add_argument("--particles", type=int, dest="n_particles")
    p.add_argument("--process-noise", type=float)
    p.add_argument("--prior-sigma", type=_floats(3))
    p.add_argument("--prior-mean", type=_floats(3), help="ECEF prior center; default is a pseudorange fix")
    p.add_argument("--policy", choices=pf.DEGENERACY_POLICIES)

    p = sub.add_parser("gridmap", help="log-likelihood map on a grid through the rover")
    _common(p)
    p.add_argument("--selector", help=f"one of {', '.join(SELECTORS)} or BAND:SAT for one pair")
    p.add_argument("--half-extent", type=float)
    p.add_argument("--resolution", type=float)
    p.add_argument("--plane", choices=("en", "eu", "nu"))
    p.add_argument("--noise-free", action="store_true", default=None)

    p = sub.add_parser("simulate", help="write a moving-rover epoch file and velocity CSV")
    _common(p)
    p.add_argument("--n-epochs", type=int, default=60)
    p.add_argument("--velocity", type=_floats(3), default=(1.0, 0.5, 0.0), help="ENU velocity [m/s]")
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--noise-free", action="store_true")
    return parser


def _apply_overrides(cfg, args):
    fcfg = cfg.filter
    if getattr(args, "n_particles", None) is not None:
        fcfg = replace(fcfg, n_particles=args.n_particles)
    if getattr(args, "policy", None) is not None:
        fcfg = replace(fcfg, degeneracy_policy=args.policy)
    battery = {}
    for name in ("n_trials", "epochs_per_trial", "process_noise", "prior_sigma"):
        val = getattr(args, name, None)
        if val is not None:
            battery[name] = val
    if getattr(args, "fixed_threshold", None) is not None:
        battery["fixed_threshold"] = args.fixed_threshold
    if getattr(args, "strategies", None):
        battery["strategies"] = tuple(s.strip() for s in args.strategies.split(",") if s.strip())
    if args.seed is not None:
        battery["master_seed"] = args.seed
    return replace(cfg, filter=fcfg, **battery)


def _progress(done, total):
    if done == total or done % 10 == 0:
        log.info("trial %d/%d", done, total)


def _static(args, cfg, extras, out):
    summary = run_static_battery(cfg, _progress, args.workers)
    files = io.export_battery(out, summary)
    if args.figures:
        from .plotting import plot_convergence

        plot_convergence(summary, out / "convergence.png", cfg.fixed_threshold * 100)
        files.append("convergence.png")
    for s in summary.strategies.values():
        log.info("%-16s epoch1 %5.1f%%  final %5.1f%%", s.strategy, s.epoch1_fix_pct, s.final_fix_pct)
    return files, extras


def _sweep(args, cfg, extras, out):
    sweep_cfg = extras["sweep"]
    if args.counts:
        counts = [int(c) for c in args.counts.split(",")]
    else:
        counts = [int(c) for c in sweep_cfg.get("counts", DEFAULT_COUNTS)]
    if not counts or min(counts) < 1:
        raise ConfigError("particle counts must be positive")
    extras = dict(extras, sweep=dict(sweep_cfg, counts=counts))
    sweep = run_particle_sweep(cfg, counts, _progress, args.workers)
    files = io.export_sweep(out, sweep)
    for n, summary in sweep.items():
        files += io.export_battery(out, summary, prefix=f"n{n}_")
    if args.figures:
        from .plotting import plot_sweep

        plot_sweep(sweep, out / "sweep.png")
        files.append("sweep.png")
    return files, extras


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _kinematic(args, cfg, extras, out):
    kin = dict(extras["kinematic"])
    epochs = io.read_epochs(args.epochs_file)
    velocities, truth = io.read_motion_csv(args.velocities, [e.time for e in epochs])
    process_noise = args.process_noise if args.process_noise is not None else kin.get("process_noise", 0.1)
    prior_sigma = args.prior_sigma or tuple(kin.get("prior_sigma", cfg.prior_sigma))
    mean = args.prior_mean or kin.get("prior_mean")
    if mean is None:
        mean = pseudorange_fix(epochs[0])
    fcfg = cfg.filter
    if args.n_particles is not None:
        fcfg = replace(fcfg, n_particles=args.n_particles)
    if args.policy is not None:
        fcfg = replace(fcfg, degeneracy_policy=args.policy)
    cfg = replace(cfg, filter=fcfg, master_seed=args.seed if args.seed is not None else cfg.master_seed)
    prior = pf.GaussianPrior(mean, prior_sigma)
    result = run_kinematic(epochs, velocities, fcfg, prior, cfg.master_seed, process_noise, truth,
                           cfg.schedule, fcfg.injection_sigma)
    files = io.export_kinematic(out, result)
    if args.figures and result.errors is not None:
        from .plotting import plot_error_cdf

        plot_error_cdf(result, out / "error_cdf.png")
        files.append("error_cdf.png")
    kin.update(process_noise=process_noise, prior_sigma=list(prior_sigma),
               prior_mean=[float(v) for v in np.asarray(mean)],
               epochs_sha256=_sha256(args.epochs_file), velocities_sha256=_sha256(args.velocities))
    return files, dict(extras, kinematic=kin), cfg


def _resolve_selector(text, epoch):
    if text in SELECTORS:
        return text
    band, _, sat = text.partition(":")
    key = {"pseudorange": Band.PSEUDORANGE, "wl": Band.WL, "l1": Band.L1, "l2": Band.L2}.get(band)
    if key is None or not sat:
        raise ConfigError(f"bad selector {text!r}")
    from .gnss import with_wide_lane

    for o in with_wide_lane(epoch).of_band(key):
        if o.geometry.other_sat == sat:
            return o
    raise ConfigError(f"no {band} pair with satellite {sat!r}")


def _gridmap(args, cfg, extras, out):
    g = dict(extras["gridmap"])
    for name in ("selector", "half_extent", "resolution", "plane", "noise_free"):
        val = getattr(args, name)
        if val is not None:
            g[name] = val
    g = {"selector": "combined", "half_extent": 1.0, "resolution": 0.01, "plane": "en",
         "noise_free": False, **g}
    seed = args.seed if args.seed is not None else cfg.master_seed
    scfg = cfg.scene
    if g["noise_free"]:
        scfg = replace(scfg, pseudorange_sigma=0.0, carrier_sigma_cycles=0.0)
    scene = Scene(scfg)
    truth = scfg.rover
    epoch = scene.synthesize_epoch(0.0, truth, np.random.SeedSequence([seed, 0]))
    selector = _resolve_selector(str(g["selector"]), epoch)
    gmap = grid_likelihood_map(epoch, truth, selector, float(g["half_extent"]), float(g["resolution"]), g["plane"])
    gmap.to_csv(out / "gridmap.csv")
    files = ["gridmap.csv"]
    if args.figures:
        from .plotting import plot_gridmap

        plot_gridmap(gmap, out / "gridmap.png")
        files.append("gridmap.png")
    return files, dict(extras, gridmap=g), replace(cfg, master_seed=seed, scene=scfg)


def _simulate(args, cfg, extras, out):
    seed = args.seed if args.seed is not None else cfg.master_seed
    scfg = cfg.scene
    if args.noise_free:
        scfg = replace(scfg, pseudorange_sigma=0.0, carrier_sigma_cycles=0.0)
    if args.n_epochs < 1 or not args.dt > 0:
        raise ConfigError("simulate needs n_epochs >= 1 and dt > 0")
    epochs, vels, truth = simulate_trajectory(scfg, args.n_epochs, args.velocity, args.dt, seed)
    io.write_epochs(out / "epochs.jsonl", epochs)
    io.write_motion_csv(out / "velocities.csv", [e.time for e in epochs], vels, truth)
    sim = {"n_epochs": args.n_epochs, "velocity_enu": list(args.velocity), "dt": args.dt,
           "noise_free": bool(args.noise_free)}
    return ["epochs.jsonl", "velocities.csv"], dict(extras, simulate=sim), replace(cfg, master_seed=seed, scene=scfg)


_COMMANDS = {
    "static-battery": _static,
    "particle-sweep": _sweep,
    "kinematic": _kinematic,
    "gridmap": _gridmap,
    "simulate": _simulate,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg, extras = io.load_config(args.config)
        if args.command in ("static-battery", "particle-sweep"):
            cfg = _apply_overrides(cfg, args)
        args.out.mkdir(parents=True, exist_ok=True)
        res = _COMMANDS[args.command](args, cfg, extras, args.out)
        files, extras = res[0], res[1]
        if len(res) == 3:
            cfg = res[2]
        io.write_manifest(args.out / "manifest.json", args.command, cfg, extras, files)
    except pf.DegeneracyError as exc:
        log.error("degeneracy: %s", exc)
        return EXIT_DEGENERACY
    except (io.EpochFileError, ObservationError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (ConfigError, SceneError, pf.FilterError) as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
