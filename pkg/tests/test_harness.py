from dataclasses import replace

import numpy as np
import pytest

from mupf import filter as pf
from mupf.harness import (
    ConfigError,
    TrialBatteryConfig,
    _prior,
    _trial_scene,
    run_kinematic,
    run_particle_sweep,
    run_static_battery,
    simulate_trajectory,
    trial_streams,
)
from mupf.scene import SceneConfig


def small(**kw):
    base = dict(n_trials=4, epochs_per_trial=3, filter=pf.FilterConfig(n_particles=300))
    base.update(kw)
    return TrialBatteryConfig(**base)


def test_config_validation():
    for bad in ({"n_trials": 0}, {"epochs_per_trial": 0}, {"strategies": ()}, {"strategies": ("greedy",)},
                {"fixed_threshold": 0.0}, {"master_seed": -1}):
        with pytest.raises(ConfigError):
            TrialBatteryConfig(**bad)


def test_battery_shapes():
    cfg = small()
    s = run_static_battery(cfg)
    assert len(s.trials) == cfg.n_trials * len(cfg.strategies)
    for t in s.trials:
        assert len(t.per_epoch_3d_error) == len(t.fixed_at) == cfg.epochs_per_trial
        assert all(e >= 0 for e in t.per_epoch_3d_error)
        assert t.fixed_at == [e <= 0.10 for e in t.per_epoch_3d_error]
    for strat in s.strategies.values():
        assert 0 <= strat.epoch1_fix_pct <= 100 and 0 <= strat.final_fix_pct <= 100


def test_zero_noise_sanity():
    scene = SceneConfig(pseudorange_sigma=0.0, carrier_sigma_cycles=0.0)
    cfg = small(n_trials=2, prior_sigma=(0.0, 0.0, 0.0), scene=scene, process_noise=0.0)
    s = run_static_battery(cfg)
    for t in s.trials:
        assert max(t.per_epoch_3d_error) < 0.01


def test_single_trial_single_epoch_zero_noise():
    scene = SceneConfig(pseudorange_sigma=0.0, carrier_sigma_cycles=0.0)
    cfg = small(n_trials=1, epochs_per_trial=1, prior_sigma=(0.0, 0.0, 0.0), scene=scene, process_noise=0.0)
    for t in run_static_battery(cfg).trials:
        assert t.per_epoch_3d_error[0] < 0.01


def test_strategy_fairness():
    # a strategy's results do not depend on which other strategies share the battery
    full = run_static_battery(small())
    alone = run_static_battery(small(strategies=("annealed",)))
    a = [t.per_epoch_3d_error for t in full.trials if t.strategy == "annealed"]
    b = [t.per_epoch_3d_error for t in alone.trials]
    assert a == b


def test_deterministic_and_worker_independent():
    cfg = small(n_trials=3)
    a = run_static_battery(cfg)
    b = run_static_battery(cfg, workers=2)
    assert [t.per_epoch_3d_error for t in a.trials] == [t.per_epoch_3d_error for t in b.trials]


def test_sweep_single_count_equals_battery():
    cfg = small(n_trials=2)
    sweep = run_particle_sweep(cfg, [300])
    direct = run_static_battery(cfg)
    assert [t.per_epoch_3d_error for t in sweep[300].trials] == [t.per_epoch_3d_error for t in direct.trials]
    with pytest.raises(ConfigError):
        run_particle_sweep(cfg, [])


def test_trial_streams_independent_of_order():
    a = trial_streams(7, 3)
    b = trial_streams(7, 3)
    assert [s.generate_state(2).tolist() for s in a] == [s.generate_state(2).tolist() for s in b]
    assert trial_streams(7, 3)[0].generate_state(1) != trial_streams(7, 4)[0].generate_state(1)


def test_kinematic_zero_velocity_matches_static_trial():
    cfg = small(n_trials=1, epochs_per_trial=5, strategies=("multiple_update",), master_seed=11)
    static = run_static_battery(cfg).trials[0]
    scene_seq, obs_seq, _ = trial_streams(cfg.master_seed, 0)
    scene = _trial_scene(cfg, scene_seq)
    truth = scene.cfg.rover
    rng = np.random.default_rng(obs_seq)
    epochs = [scene.synthesize_epoch(float(k), truth, rng) for k in range(5)]
    res = run_kinematic(epochs, [np.zeros(3)] * 5, cfg.filter, _prior(cfg, truth), seed=cfg.master_seed,
                        process_noise=cfg.process_noise, truth=[truth] * 5)
    assert res.errors == static.per_epoch_3d_error


def test_kinematic_noise_free_trajectory():
    scene = SceneConfig(pseudorange_sigma=0.0, carrier_sigma_cycles=0.0)
    epochs, vel, truth = simulate_trajectory(scene, 30, seed=2)
    res = run_kinematic(epochs, vel, pf.FilterConfig(), pf.GaussianPrior(truth[0], 2.0), seed=2, truth=truth)
    assert max(res.errors[1:]) <= 0.02


def test_kinematic_cdf_and_errors():
    epochs, vel, truth = simulate_trajectory(SceneConfig(), 10, seed=1)
    res = run_kinematic(epochs, vel, pf.FilterConfig(n_particles=500), pf.GaussianPrior(truth[0], 2.0),
                        seed=1, truth=truth)
    cdf = res.cdf()
    fracs = [f for _, f in cdf]
    assert all(b >= a for a, b in zip(fracs, fracs[1:]))
    assert any(t == 0.5 for t, _ in cdf)
    with pytest.raises(ConfigError):
        run_kinematic(epochs, vel[:-1], pf.FilterConfig(), pf.GaussianPrior(truth[0], 2.0))
    backwards = [replace(e, time=-e.time) for e in epochs]
    with pytest.raises(ConfigError):
        run_kinematic(backwards, vel, pf.FilterConfig(), pf.GaussianPrior(truth[0], 2.0))
    no_truth = run_kinematic(epochs, vel, pf.FilterConfig(n_particles=200), pf.GaussianPrior(truth[0], 2.0))
    with pytest.raises(ConfigError):
        no_truth.cdf()


def test_abort_policy_surfaces():
    def dead(states):
        return np.full(len(states), -np.inf)

    sched = pf.UpdateSchedule([pf.StageDescriptor("dead", 1.0, dead)])
    p = pf.init_particles(pf.GaussianPrior((0, 0, 0), 1.0), 10, 0)
    with pytest.raises(pf.DegeneracyError):
        pf.update(p, sched, pf.FilterConfig(degeneracy_policy="abort", strategy="annealed"), 0)
