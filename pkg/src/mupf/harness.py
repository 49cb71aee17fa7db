"""
Static convergence batteries, particle-count sweeps and kinematic runs.

Every trial derives its random streams from ``(master_seed, trial_id)`` so
trials are reproducible one at a time and independent of execution order.
Within a trial all strategies see the same scene, the same observation
epochs, the same prior and the same filter seed.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from . import filter as pf
from .gnss import build_update_schedule
from .scene import Scene, SceneConfig


class ConfigError(ValueError):
    pass


@dataclass
class ScheduleConfig:
    pseudorange_sigma: float = 0.5
    carrier_sigma_cycles: float = 0.05

    def build(self, epoch):
        return build_update_schedule(epoch, self.pseudorange_sigma, self.carrier_sigma_cycles)


@dataclass
class TrialBatteryConfig:
    n_trials: int = 100
    epochs_per_trial: int = 20
    filter: pf.FilterConfig = field(default_factory=pf.FilterConfig)
    prior_sigma: tuple = (2.0, 2.0, 2.0)
    prior_offset_enu: tuple = (0.0, 0.0, 0.0)
    scene: SceneConfig = field(default_factory=SceneConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    strategies: tuple = ("normal", "annealed", "multiple_update")
    master_seed: int = 0
    process_noise: float = 0.02
    epoch_interval: float = 1.0
    fixed_threshold: float = 0.10
    randomize_azimuth: bool = True

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if self.epochs_per_trial < 1:
            raise ConfigError("epochs_per_trial must be >= 1")
        if not self.strategies:
            raise ConfigError("no strategies to compare")
        for s in self.strategies:
            if s not in pf.STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}; pick from {pf.STRATEGIES}")
        if self.process_noise < 0 or self.fixed_threshold <= 0 or self.epoch_interval <= 0:
            raise ConfigError("process_noise >= 0, fixed_threshold > 0 and epoch_interval > 0 required")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must fit in 64 unsigned bits")
        self.strategies = tuple(self.strategies)


@dataclass
class TrialResult:
    trial_id: int
    strategy: str
    per_epoch_3d_error: list
    fixed_at: list
    degeneracy_events: list = field(default_factory=list)
    estimates: list = field(default_factory=list)


@dataclass
class StrategySummary:
    strategy: str
    epoch1_err_cm: float
    epoch1_fix_pct: float
    final_err_cm: float
    final_fix_pct: float
    per_epoch_mean_cm: list
    per_epoch_fix_pct: list
    per_epoch_quantiles_cm: dict


@dataclass
class BatterySummary:
    n_trials: int
    epochs: int
    n_particles: int
    strategies: dict
    trials: list = field(default_factory=list)

    def __getitem__(self, strategy) -> StrategySummary:
        return self.strategies[strategy]


def trial_streams(master_seed, trial_id):
    """Scene, observation-noise and filter seed sequences for one trial."""
    return np.random.SeedSequence([int(master_seed), int(trial_id)]).spawn(3)


def _trial_scene(cfg: TrialBatteryConfig, scene_seq):
    rng = np.random.default_rng(scene_seq)
    scene_seed = int(rng.integers(2**63))
    azimuth = float(rng.uniform(0.0, 360.0)) if cfg.randomize_azimuth else cfg.scene.azimuth_offset_deg
    return Scene(replace(cfg.scene, seed=scene_seed, azimuth_offset_deg=azimuth))


def _prior(cfg: TrialBatteryConfig, truth):
    from .geodesy import enu_to_ecef

    return pf.GaussianPrior(enu_to_ecef(cfg.prior_offset_enu, truth), cfg.prior_sigma)


def run_filter(epochs, schedules, filter_cfg: pf.FilterConfig, prior: pf.GaussianPrior, motions,
               seed, injection_sigma=None):
    """
    Run one filter over a sequence of epochs.

    ``motions[k]`` carries the prediction into epoch ``k``. Returns the
    list of estimates and the list of ``(epoch_index, stage)`` degeneracy
    events.
    """
    rng = np.random.default_rng(seed)
    particles = pf.init_particles(prior, filter_cfg.n_particles, rng)
    inj_sigma = injection_sigma if injection_sigma is not None else float(np.max(prior.sigma_per_axis))
    estimates, events = [], []
    estimate = None
    for k, (schedule, motion) in enumerate(zip(schedules, motions)):
        particles = pf.predict(particles, motion, rng)
        if estimate is not None and filter_cfg.injection_fraction > 0 and inj_sigma > 0:
            center = estimate + motion.velocity * motion.dt
            particles = pf.inject(particles, center, inj_sigma, filter_cfg.injection_fraction, rng)
        particles, diag = pf.update(particles, schedule, filter_cfg, rng)
        events.extend((k, stage) for stage in diag.degeneracy_events)
        estimate = pf.estimate_state(particles)
        estimates.append(estimate)
    return estimates, events


def _static_motion(cfg: TrialBatteryConfig):
    return pf.MotionModel((0.0, 0.0, 0.0), cfg.process_noise, cfg.epoch_interval)


def run_trial(cfg: TrialBatteryConfig, trial_id: int) -> list[TrialResult]:
    scene_seq, obs_seq, filt_seq = trial_streams(cfg.master_seed, trial_id)
    scene = _trial_scene(cfg, scene_seq)
    truth = scene.cfg.rover
    obs_rng = np.random.default_rng(obs_seq)
    epochs = [scene.synthesize_epoch(k * cfg.epoch_interval, truth, obs_rng)
              for k in range(cfg.epochs_per_trial)]
    schedules = [cfg.schedule.build(e) for e in epochs]
    motions = [_static_motion(cfg)] * len(epochs)
    prior = _prior(cfg, truth)
    results = []
    for strategy in cfg.strategies:
        fcfg = replace(cfg.filter, strategy=strategy)
        estimates, events = run_filter(epochs, schedules, fcfg, prior, motions, filt_seq,
                                       cfg.filter.injection_sigma)
        err = [float(np.linalg.norm(e - truth)) for e in estimates]
        results.append(TrialResult(trial_id, strategy, err, [x <= cfg.fixed_threshold for x in err],
                                   events, [e.tolist() for e in estimates]))
    return results


def summarize(cfg: TrialBatteryConfig, trials: list[TrialResult]) -> BatterySummary:
    out = {}
    for strategy in cfg.strategies:
        rows = [t for t in trials if t.strategy == strategy]
        err = np.array([t.per_epoch_3d_error for t in rows]) * 100.0
        fix = np.array([t.fixed_at for t in rows], dtype=float) * 100.0
        q = {str(p): np.percentile(err, p, axis=0).tolist() for p in (50, 90)}
        out[strategy] = StrategySummary(
            strategy,
            float(err[:, 0].mean()), float(fix[:, 0].mean()),
            float(err[:, -1].mean()), float(fix[:, -1].mean()),
            err.mean(axis=0).tolist(), fix.mean(axis=0).tolist(), q,
        )
    return BatterySummary(cfg.n_trials, cfg.epochs_per_trial, cfg.filter.n_particles, out, trials)


def run_static_battery(cfg: TrialBatteryConfig, progress=None, workers=1) -> BatterySummary:
    """
    Run ``cfg.n_trials`` static trials for every strategy.

    With ``workers > 1`` trials run in a process pool. Results are always
    reduced in trial-id order, so the summary does not depend on scheduling.
    """
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    ids = range(cfg.n_trials)
    trials = []
    if workers == 1:
        per_trial = map(partial(run_trial, cfg), ids)
        pool = None
    else:
        pool = ProcessPoolExecutor(workers)
        per_trial = pool.map(partial(run_trial, cfg), ids)
    try:
        for done, rows in enumerate(per_trial, 1):
            trials.extend(rows)
            if progress is not None:
                progress(done, cfg.n_trials)
    finally:
        if pool is not None:
            pool.shutdown()
    return summarize(cfg, trials)


def run_particle_sweep(cfg: TrialBatteryConfig, counts, progress=None, workers=1) -> dict[int, BatterySummary]:
    if not counts:
        raise ConfigError("particle sweep needs at least one count")
    out = {}
    for n in counts:
        sub = replace(cfg, filter=replace(cfg.filter, n_particles=int(n)))
        out[int(n)] = run_static_battery(sub, progress, workers)
    return out


@dataclass
class KinematicResult:
    times: list
    estimates: list
    errors: list | None = None
    degeneracy_events: list = field(default_factory=list)

    def cdf(self, thresholds=None):
        """(threshold_m, fraction of epochs with 3D error <= threshold)."""
        if self.errors is None:
            raise ConfigError("error CDF needs a truth trajectory")
        if thresholds is None:
            thresholds = np.round(np.arange(0, 201) * 0.01, 2)
        err = np.asarray(self.errors)
        return [(float(t), float((err <= t).mean())) for t in thresholds]


def run_kinematic(epochs, velocities, filter_cfg: pf.FilterConfig, prior: pf.GaussianPrior,
                  seed=0, process_noise=0.1, truth=None, schedule: ScheduleConfig | None = None,
                  injection_sigma=None) -> KinematicResult:
    """
    Multiple-update filtering along a trajectory with externally supplied velocities.

    ``velocities[k]`` is the ECEF velocity at epoch ``k``; the prediction
    into epoch ``k`` uses ``velocities[k-1]`` over the epoch spacing. The
    first epoch is predicted with diffusion only, spaced like the second.
    The filter stream is the one a static trial 0 under ``seed`` would use.
    """
    if len(velocities) != len(epochs):
        raise ConfigError(f"{len(velocities)} velocities for {len(epochs)} epochs")
    if truth is not None and len(truth) != len(epochs):
        raise ConfigError(f"{len(truth)} truth rows for {len(epochs)} epochs")
    schedule = schedule or ScheduleConfig()
    times = [e.time for e in epochs]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("epoch times must be strictly increasing")
    first_dt = times[1] - times[0] if len(times) > 1 else 1.0
    motions = [pf.MotionModel((0.0, 0.0, 0.0), process_noise, first_dt)]
    for k in range(1, len(epochs)):
        motions.append(pf.MotionModel(velocities[k - 1], process_noise, times[k] - times[k - 1]))
    fcfg = replace(filter_cfg, strategy="multiple_update")
    schedules = [schedule.build(e) for e in epochs]
    _, _, filt_seq = trial_streams(seed, 0)
    estimates, events = run_filter(epochs, schedules, fcfg, prior, motions, filt_seq, injection_sigma)
    errors = None
    if truth is not None:
        errors = [float(np.linalg.norm(e - np.asarray(t))) for e, t in zip(estimates, truth)]
    return KinematicResult(times, [e.tolist() for e in estimates], errors, events)


def simulate_trajectory(scene_cfg: SceneConfig, n_epochs, velocity_enu=(1.0, 0.5, 0.0), dt=1.0,
                        seed=0, start_enu=None):
    """
    Straight-line rover trajectory with noisy observations from one scene.

    Returns ``(epochs, velocities_ecef, truth_ecef)``.
    """
    from .geodesy import enu_basis, enu_to_ecef

    scene = Scene(scene_cfg)
    base = scene_cfg.base
    start = enu_to_ecef(scene_cfg.rover_offset_enu if start_enu is None else start_enu, base)
    vel = np.asarray(velocity_enu, dtype=float) @ enu_basis(base)
    rng = np.random.default_rng(seed)
    epochs, vels, truth = [], [], []
    for k in range(n_epochs):
        pos = start + vel * k * dt
        epochs.append(scene.synthesize_epoch(k * dt, pos, rng))
        vels.append(vel.copy())
        truth.append(pos)
    return epochs, vels, truth
