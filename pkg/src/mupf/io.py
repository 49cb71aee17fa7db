"""
Config files, the line-delimited epoch format and result tables.

Epoch files hold one JSON object per line::

    {"time": 0.0, "base": [x, y, z],
     "satellites": [{"id": "G01", "pos": [x, y, z]}, ...],
     "observations": [{"pivot": "G08", "other": "G01", "band": "carrier_L1",
                       "value": 1234.56, "sigma": 0.05, "wavelength": 0.19}, ...]}

``base`` may also be given per observation. Floats are written with
``repr`` precision so files round-trip bit-exactly.
"""

import csv
import hashlib
import json
from dataclasses import asdict, fields, is_dataclass

import numpy as np
import yaml

from . import filter as pf
from .gnss import Band, DdGeometry, DdObservation, ObservationEpoch, SatelliteEpochState
from .harness import ConfigError, ScheduleConfig, TrialBatteryConfig
from .scene import SceneConfig

SUMMARY_COLUMNS = ("strategy", "epoch1_err_cm", "epoch1_fix_pct", "final_err_cm", "final_fix_pct")


class EpochFileError(ValueError):
    pass


# --- epoch files ---

def epoch_to_record(epoch: ObservationEpoch) -> dict:
    bases = {tuple(o.geometry.base_position.tolist()) for o in epoch.observations}
    shared = len(bases) == 1
    rec = {"time": float(epoch.time)}
    if shared:
        rec["base"] = list(next(iter(bases)))
    rec["satellites"] = [{"id": s.sat_id, "pos": s.position.tolist()} for s in epoch.satellites]
    obs = []
    for o in epoch.observations:
        row = {"pivot": o.geometry.pivot_sat, "other": o.geometry.other_sat, "band": o.band.value,
               "value": float(o.value), "sigma": float(o.sigma)}
        if o.wavelength is not None:
            row["wavelength"] = float(o.wavelength)
        if not shared:
            row["base"] = o.geometry.base_position.tolist()
        obs.append(row)
    rec["observations"] = obs
    return rec


def record_to_epoch(rec: dict) -> ObservationEpoch:
    try:
        sats = [SatelliteEpochState(str(s["id"]), s["pos"]) for s in rec["satellites"]]
        obs = []
        for o in rec["observations"]:
            base = o.get("base", rec.get("base"))
            if base is None:
                raise EpochFileError("observation without a base position")
            geom = DdGeometry(str(o["pivot"]), str(o["other"]), base)
            obs.append(DdObservation(geom, float(o["value"]), Band(o["band"]), float(o["sigma"]),
                                     None if o.get("wavelength") is None else float(o["wavelength"])))
        return ObservationEpoch(float(rec["time"]), sats, obs)
    except (KeyError, TypeError, ValueError) as exc:
        raise EpochFileError(f"malformed epoch record: {exc}") from exc


def write_epochs(path, epochs):
    with open(path, "w") as fh:
        for e in epochs:
            fh.write(json.dumps(epoch_to_record(e), separators=(",", ":")) + "\n")


def read_epochs(path) -> list[ObservationEpoch]:
    epochs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EpochFileError(f"{path}:{lineno}: {exc}") from exc
            try:
                epochs.append(record_to_epoch(rec))
            except EpochFileError as exc:
                raise EpochFileError(f"{path}:{lineno}: {exc}") from exc
    if not epochs:
        raise EpochFileError(f"{path}: no epochs")
    return epochs


def write_motion_csv(path, times, velocities, truth=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["time", "vx", "vy", "vz"] + (["x", "y", "z"] if truth is not None else [])
        w.writerow(header)
        for k, t in enumerate(times):
            row = [repr(float(t))] + [repr(float(v)) for v in velocities[k]]
            if truth is not None:
                row += [repr(float(v)) for v in truth[k]]
            w.writerow(row)


def read_motion_csv(path, times=None, tol=1e-6):
    """
    Read per-epoch velocities (and optional truth) keyed by time.

    With ``times`` given, rows must line up with those epoch times.
    Returns ``(velocities, truth_or_None)``.
    """
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise EpochFileError(f"{path}: no rows")
    try:
        t = [float(r["time"]) for r in rows]
        vel = [np.array([float(r["vx"]), float(r["vy"]), float(r["vz"])]) for r in rows]
        has_truth = all(k in rows[0] and rows[0][k] not in (None, "") for k in ("x", "y", "z"))
        truth = [np.array([float(r["x"]), float(r["y"]), float(r["z"])]) for r in rows] if has_truth else None
    except (KeyError, ValueError) as exc:
        raise EpochFileError(f"{path}: malformed velocity row: {exc}") from exc
    if times is not None:
        if len(times) != len(t) or any(abs(a - b) > tol for a, b in zip(times, t)):
            raise EpochFileError(f"{path}: velocity times do not line up with the epoch times")
    return vel, truth


# --- config ---

def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def config_from_dict(data: dict | None) -> tuple[TrialBatteryConfig, dict]:
    """
    Build a battery config from the documented mapping.

    Top-level sections: ``battery`` (TrialBatteryConfig scalars), ``filter``,
    ``scene``, ``schedule``, plus free-form ``sweep``, ``kinematic`` and
    ``gridmap`` sections returned as the second element.
    """
    data = dict(data or {})
    known = {"battery", "filter", "scene", "schedule", "sweep", "kinematic", "gridmap"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    filt = dict(data.get("filter") or {})
    if "stage_roughening" in filt and not isinstance(filt["stage_roughening"], dict):
        raise ConfigError("[filter] stage_roughening must be a mapping")
    fcfg = _build(pf.FilterConfig, filt, "filter")
    scfg = _build(SceneConfig, data.get("scene"), "scene")
    sched = _build(ScheduleConfig, data.get("schedule"), "schedule")
    battery = dict(data.get("battery") or {})
    for k in ("filter", "scene", "schedule"):
        if k in battery:
            raise ConfigError(f"[battery] {k!r} belongs in its own section")
    battery.update(filter=fcfg, scene=scfg, schedule=sched)
    cfg = _build(TrialBatteryConfig, battery, "battery")
    extras = {k: dict(data.get(k) or {}) for k in ("sweep", "kinematic", "gridmap")}
    return cfg, extras


def load_config(path=None):
    if path is None:
        return config_from_dict({})
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def _plain(obj):
    if is_dataclass(obj):
        return _plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_to_dict(cfg: TrialBatteryConfig, extras=None) -> dict:
    battery = _plain(cfg)
    out = {
        "filter": battery.pop("filter"),
        "scene": battery.pop("scene"),
        "schedule": battery.pop("schedule"),
        "battery": battery,
    }
    for k, v in (extras or {}).items():
        if v:
            out[k] = _plain(v)
    return out


def config_hash(cfg: TrialBatteryConfig, extras=None) -> str:
    blob = json.dumps(config_to_dict(cfg, extras), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# --- results ---

def _fmt(x, digits=4):
    return f"{x:.{digits}f}"


def write_manifest(path, command, cfg, extras=None, files=()):
    manifest = {
        "command": command,
        "master_seed": cfg.master_seed,
        "config_sha256": config_hash(cfg, extras),
        "config": config_to_dict(cfg, extras),
        "files": sorted(files),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_summary_csv(path, summary, extra_cols=None):
    extra_cols = extra_cols or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(extra_cols) + list(SUMMARY_COLUMNS))
        for s in summary.strategies.values():
            w.writerow(list(extra_cols.values()) + [
                s.strategy, _fmt(s.epoch1_err_cm, 2), _fmt(s.epoch1_fix_pct, 1),
                _fmt(s.final_err_cm, 2), _fmt(s.final_fix_pct, 1)])


def write_epoch_stats_csv(path, summary):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "epoch", "mean_err_cm", "median_err_cm", "p90_err_cm", "fix_pct"])
        for s in summary.strategies.values():
            for k in range(summary.epochs):
                w.writerow([s.strategy, k + 1, _fmt(s.per_epoch_mean_cm[k], 3),
                            _fmt(s.per_epoch_quantiles_cm["50"][k], 3),
                            _fmt(s.per_epoch_quantiles_cm["90"][k], 3), _fmt(s.per_epoch_fix_pct[k], 1)])


def write_trials_csv(path, trials):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "trial_id", "epoch", "error_m", "fixed", "degenerate_stages"])
        for t in trials:
            by_epoch = {}
            for k, stage in t.degeneracy_events:
                by_epoch.setdefault(k, []).append(stage)
            for k, (e, f) in enumerate(zip(t.per_epoch_3d_error, t.fixed_at)):
                w.writerow([t.strategy, t.trial_id, k + 1, _fmt(e, 6), int(f), ";".join(by_epoch.get(k, []))])


def export_battery(outdir, summary, prefix=""):
    """Write summary, per-epoch statistics and per-trial series; returns the file names."""
    names = [f"{prefix}summary.csv", f"{prefix}epoch_stats.csv", f"{prefix}trials.csv"]
    write_summary_csv(outdir / names[0], summary)
    write_epoch_stats_csv(outdir / names[1], summary)
    write_trials_csv(outdir / names[2], summary.trials)
    return names


def export_sweep(outdir, sweep):
    name = "sweep.csv"
    with open(outdir / name, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_particles"] + list(SUMMARY_COLUMNS))
        for n, summary in sweep.items():
            for s in summary.strategies.values():
                w.writerow([n, s.strategy, _fmt(s.epoch1_err_cm, 2), _fmt(s.epoch1_fix_pct, 1),
                            _fmt(s.final_err_cm, 2), _fmt(s.final_fix_pct, 1)])
    return [name]


def export_kinematic(outdir, result):
    names = ["trajectory.csv"]
    with open(outdir / names[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "x", "y", "z"] + (["error_m"] if result.errors is not None else []))
        for k, (t, est) in enumerate(zip(result.times, result.estimates)):
            row = [repr(float(t))] + [f"{v:.4f}" for v in est]
            if result.errors is not None:
                row.append(_fmt(result.errors[k], 4))
            w.writerow(row)
    if result.errors is not None:
        names.append("error_cdf.csv")
        with open(outdir / names[1], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold_m", "fraction_within"])
            for thr, frac in result.cdf():
                w.writerow([f"{thr:.2f}", _fmt(frac, 4)])
        names.append("kinematic_summary.csv")
        err = np.asarray(result.errors)
        after = err[1:] if err.size > 1 else err
        with open(outdir / names[2], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epochs", "mean_err_cm", "fraction_within_0.1m_after_first", "fraction_within_0.5m"])
            w.writerow([err.size, _fmt(err.mean() * 100, 2), _fmt((after <= 0.1).mean(), 4),
                        _fmt((err <= 0.5).mean(), 4)])
    return names
