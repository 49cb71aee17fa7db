"""
Sequential Monte Carlo engine with three observation-update strategies.

``update_normal`` multiplies every likelihood into a single weight update.
``update_multiple`` applies the likelihood stages one at a time, broadest
first, resampling after each, so sharply peaked observations only see
particles already pulled toward them by the broader ones.
``update_annealed`` tempers the combined likelihood through an increasing
exponent schedule.

Weights are kept as natural-log values and normalized by max subtraction.
Randomness comes in through ``seed`` arguments, which accept anything
:func:`numpy.random.default_rng` does: an integer or sequence of integers
starts a fresh stream, a ``Generator`` is consumed in place.
"""

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

RESET_UNIFORM = "reset_uniform"
ABORT = "abort"
DEGENERACY_POLICIES = (RESET_UNIFORM, ABORT)
STRATEGIES = ("normal", "multiple_update", "annealed")
DEFAULT_ANNEALING = (0.125, 0.25, 0.5, 1.0)


class FilterError(ValueError):
    pass


class ScheduleError(FilterError):
    """Stage spreads are not strictly decreasing."""


class DegeneracyError(RuntimeError):
    """Every particle weight vanished under the ``abort`` policy."""

    def __init__(self, stage):
        super().__init__(f"all particle weights vanished at stage {stage!r}")
        self.stage = stage


@dataclass(frozen=True)
class ParticleSet:
    states: np.ndarray
    log_weights: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        lw = np.asarray(self.log_weights, dtype=float)
        if states.ndim != 2 or states.shape[0] < 1:
            raise FilterError(f"states must be (N, d) with N >= 1, got {states.shape}")
        if lw.shape != (states.shape[0],):
            raise FilterError("log_weights must have one entry per state")
        if np.isnan(lw).any():
            raise FilterError("log_weights contain NaN")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "log_weights", lw)

    @property
    def count(self) -> int:
        return self.states.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def ess(self) -> float:
        w = self.weights
        return float(w.sum() ** 2 / (w @ w)) if w.any() else 0.0


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    sigma_per_axis: np.ndarray

    def __post_init__(self):
        sigma = np.broadcast_to(np.asarray(self.sigma_per_axis, dtype=float), (3,)).copy()
        if (sigma < 0).any():
            raise FilterError("prior sigma must be nonnegative")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "sigma_per_axis", sigma)


@dataclass(frozen=True)
class MotionModel:
    velocity: np.ndarray = (0.0, 0.0, 0.0)
    process_noise_sigma: np.ndarray = (0.02, 0.02, 0.02)
    dt: float = 1.0

    def __post_init__(self):
        noise = np.broadcast_to(np.asarray(self.process_noise_sigma, dtype=float), (3,)).copy()
        if not self.dt > 0:
            raise FilterError("dt must be positive")
        if (noise < 0).any():
            raise FilterError("process noise must be nonnegative")
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        object.__setattr__(self, "process_noise_sigma", noise)


@dataclass(frozen=True)
class StageDescriptor:
    stage_id: str
    nominal_sigma: float
    loglik: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class UpdateSchedule:
    stages: Sequence[StageDescriptor]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    def __len__(self):
        return len(self.stages)

    def check_descending(self):
        sig = [s.nominal_sigma for s in self.stages]
        for i, (a, b) in enumerate(zip(sig, sig[1:])):
            if not a > b:
                raise ScheduleError(
                    f"stage {self.stages[i + 1].stage_id!r} (sigma {b}) does not follow "
                    f"{self.stages[i].stage_id!r} (sigma {a}) in strictly decreasing order"
                )

    def combined_loglik(self, states) -> np.ndarray:
        return sum(s.loglik(states) for s in self.stages)


DEFAULT_ROUGHENING = {"pseudorange": 0.5, "*": 1.0}


@dataclass
class FilterConfig:
    """
    Filter settings shared by every strategy in a run.

    ``stage_roughening`` maps stage ids (``"*"`` as fallback) to the factor
    applied to a stage's nominal spread when roughening the survivors of a
    multiple-update stage. ``annealing_roughening`` scales the particle
    covariance used to diffuse survivors between annealing layers.
    ``injection_fraction`` of the particles are redrawn each epoch from an
    isotropic Gaussian of ``injection_sigma`` meters around the previous
    estimate (``None`` reuses the prior spread).
    """

    n_particles: int = 2000
    strategy: str = "multiple_update"
    annealing_exponents: Sequence[float] = DEFAULT_ANNEALING
    rng_seed: int = 0
    degeneracy_policy: str = RESET_UNIFORM
    stage_roughening: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_ROUGHENING))
    annealing_roughening: float = 0.3
    injection_fraction: float = 0.05
    injection_sigma: float | None = None

    def __post_init__(self):
        if self.n_particles < 1:
            raise FilterError("n_particles must be >= 1")
        if self.strategy not in STRATEGIES:
            raise FilterError(f"unknown strategy {self.strategy!r}")
        if self.degeneracy_policy not in DEGENERACY_POLICIES:
            raise FilterError(f"unknown degeneracy policy {self.degeneracy_policy!r}")
        self.annealing_exponents = tuple(float(b) for b in self.annealing_exponents)
        check_exponents(self.annealing_exponents)
        if not 0 <= self.rng_seed < 2**64:
            raise FilterError("rng_seed must fit in 64 unsigned bits")
        self.stage_roughening = {str(k): float(v) for k, v in self.stage_roughening.items()}
        if any(v < 0 for v in self.stage_roughening.values()) or self.annealing_roughening < 0:
            raise FilterError("roughening factors must be nonnegative")
        if not 0.0 <= self.injection_fraction < 1.0:
            raise FilterError("injection_fraction must lie in [0, 1)")
        if self.injection_sigma is not None and self.injection_sigma < 0:
            raise FilterError("injection_sigma must be nonnegative")


def check_exponents(exponents):
    if not exponents:
        raise FilterError("annealing needs at least one exponent")
    if any(not 0.0 < b <= 1.0 for b in exponents):
        raise FilterError("annealing exponents must lie in (0, 1]")
    if any(b > a for a, b in zip(exponents[1:], exponents)):
        raise FilterError("annealing exponents must be nondecreasing")
    if exponents[-1] != 1.0:
        raise FilterError("the last annealing exponent must be exactly 1.0")


@dataclass
class UpdateDiagnostics:
    stage_ids: list = field(default_factory=list)
    ess: list = field(default_factory=list)
    degeneracy_events: list = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return bool(self.degeneracy_events)


def init_particles(prior: GaussianPrior, n: int, seed) -> ParticleSet:
    if n < 1:
        raise FilterError("need at least one particle")
    rng = np.random.default_rng(seed)
    states = prior.mean + rng.standard_normal((n, prior.mean.size)) * prior.sigma_per_axis
    return ParticleSet(states, np.full(n, -np.log(n)))


def predict(particles: ParticleSet, model: MotionModel, seed) -> ParticleSet:
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(particles.states.shape) * model.process_noise_sigma
    states = particles.states + model.velocity * model.dt + noise
    return replace(particles, states=states)


def weight_stage(particles: ParticleSet, loglik) -> ParticleSet:
    ll = np.asarray(loglik(particles.states), dtype=float)
    ll = np.broadcast_to(ll, (particles.count,))
    # -inf + -inf stays -inf; NaN from a broken likelihood is treated as impossible
    lw = particles.log_weights + np.where(np.isnan(ll), -np.inf, ll)
    return replace(particles, log_weights=lw)


def normalize_weights(particles: ParticleSet, policy=RESET_UNIFORM, stage=None):
    """
    Max-subtract, exponentiate and renormalize the log-weights.

    Returns ``(particles, degenerate)``. A set is degenerate when every
    weight is zero after max subtraction, i.e. all log-weights are ``-inf``.
    Under ``reset_uniform`` the weights restart at ``1/N``; under ``abort``
    a :class:`DegeneracyError` naming ``stage`` is raised.
    """
    lw = particles.log_weights
    top = lw.max()
    if not np.isfinite(top):
        if policy == ABORT:
            raise DegeneracyError(stage)
        n = particles.count
        return ParticleSet(particles.states, np.full(n, -np.log(n)), degenerate=True), True
    shifted = lw - top
    w = np.exp(shifted)
    return ParticleSet(particles.states, shifted - np.log(w.sum())), False


def _check_normalized(particles: ParticleSet):
    if particles.degenerate:
        raise FilterError("cannot resample a degenerate particle set")
    total = particles.weights.sum()
    if not abs(total - 1.0) <= 1e-9:
        raise FilterError(f"weights must be normalized before resampling (sum={total!r})")


def resample_indices(weights, n, rng) -> np.ndarray:
    """Multinomial draw of ``n`` ancestor indices via inverse-CDF lookup."""
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    return np.minimum(idx, len(weights) - 1)


def resample_multinomial(particles: ParticleSet, seed) -> ParticleSet:
    _check_normalized(particles)
    rng = np.random.default_rng(seed)
    n = particles.count
    idx = resample_indices(particles.weights, n, rng)
    return ParticleSet(particles.states[idx], np.full(n, -np.log(n)))


def jitter(particles: ParticleSet, sigma, seed) -> ParticleSet:
    """Isotropic Gaussian roughening of every state by ``sigma`` meters."""
    if sigma <= 0:
        return particles
    rng = np.random.default_rng(seed)
    return replace(particles, states=particles.states + sigma * rng.standard_normal(particles.states.shape))


def inject(particles: ParticleSet, center, sigma, fraction, seed) -> ParticleSet:
    """
    Redraw ``round(fraction * N)`` randomly chosen states from N(center, sigma^2 I).

    Weights are left alone, so call this on a freshly resampled set. It lets
    a set that collapsed onto a wrong mode pick up the right one again once
    later observations favour it.
    """
    n = particles.count
    k = int(round(fraction * n))
    if k == 0:
        return particles
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, k, replace=False)
    states = particles.states.copy()
    states[idx] = np.asarray(center, dtype=float) + sigma * rng.standard_normal((k, states.shape[1]))
    return replace(particles, states=states)


def weighted_covariance(particles: ParticleSet) -> np.ndarray:
    w = particles.weights
    w = w / w.sum()
    centered = particles.states - w @ particles.states
    return (centered.T * w) @ centered


def _stage_step(particles, loglik, stage_id, rng, policy, diag):
    """Weight, normalize and resample; returns the resampled set and the weighted one."""
    particles = weight_stage(particles, loglik)
    weighted, degenerate = normalize_weights(particles, policy, stage_id)
    diag.stage_ids.append(stage_id)
    diag.ess.append(weighted.ess())
    if degenerate:
        diag.degeneracy_events.append(stage_id)
        # reset_uniform: the event is recorded, the filter carries on from uniform weights
        weighted = replace(weighted, degenerate=False)
    return resample_multinomial(weighted, rng), weighted


def update_normal(particles: ParticleSet, schedule: UpdateSchedule, seed,
                  policy=RESET_UNIFORM):
    """One update with the product of all stage likelihoods, then one resample."""
    if not len(schedule):
        raise FilterError("empty update schedule")
    rng = np.random.default_rng(seed)
    diag = UpdateDiagnostics()
    stage_id = "+".join(s.stage_id for s in schedule.stages)
    if len(schedule) == 1:
        loglik = schedule.stages[0].loglik
    else:
        loglik = schedule.combined_loglik
    particles, _ = _stage_step(particles, loglik, stage_id, rng, policy, diag)
    return particles, diag


def _roughening_for(roughening, stage_id) -> float:
    if isinstance(roughening, Mapping):
        return float(roughening.get(stage_id, roughening.get("*", 0.0)))
    return float(roughening)


def update_multiple(particles: ParticleSet, schedule: UpdateSchedule, seed,
                    policy=RESET_UNIFORM, roughening=0.0):
    """
    Weight, normalize and resample once per stage, in schedule order.

    ``roughening`` is a factor, or a mapping from stage id to factor with
    ``"*"`` as fallback. Every resampled set except the last is roughened by
    that factor times the spread of the stage just applied, so the next,
    sharper likelihood sees fresh positions instead of duplicates.
    """
    if not len(schedule):
        raise FilterError("empty update schedule")
    schedule.check_descending()
    rng = np.random.default_rng(seed)
    diag = UpdateDiagnostics()
    stages = schedule.stages
    for m, stage in enumerate(stages):
        particles, _ = _stage_step(particles, stage.loglik, stage.stage_id, rng, policy, diag)
        if m + 1 < len(stages):
            sigma = _roughening_for(roughening, stage.stage_id) * stage.nominal_sigma
            particles = jitter(particles, sigma, rng)
    return particles, diag


def annealing_increments(exponents) -> list[float]:
    """Per-stage powers whose running sum ends at exactly 1.0."""
    exponents = tuple(float(b) for b in exponents)
    check_exponents(exponents)
    inc = [exponents[0]] + [b - a for a, b in zip(exponents, exponents[1:])]
    inc[-1] = 1.0 - sum(inc[:-1])
    return inc


class _Tempered:
    def __init__(self, loglik, power):
        self.loglik = loglik
        self.power = power

    def __call__(self, states):
        return self.power * self.loglik(states)


def update_annealed(particles: ParticleSet, schedule: UpdateSchedule, exponents=DEFAULT_ANNEALING,
                    seed=None, policy=RESET_UNIFORM, roughening=0.0):
    """
    Temper the combined likelihood through ``exponents``.

    Layer ``m`` applies the increment ``exponents[m] - exponents[m-1]``, so
    the powers telescope to exactly 1. Between layers the survivors diffuse
    with covariance ``roughening**2`` times the weighted particle covariance
    of the layer just applied.
    """
    if not len(schedule):
        raise FilterError("empty update schedule")
    rng = np.random.default_rng(seed)
    diag = UpdateDiagnostics()
    if len(schedule) == 1:
        combined = schedule.stages[0].loglik
    else:
        combined = schedule.combined_loglik
    incs = annealing_increments(exponents)
    for m, inc in enumerate(incs):
        loglik = combined if inc == 1.0 else _Tempered(combined, inc)
        particles, weighted = _stage_step(particles, loglik, f"anneal[{m}]", rng, policy, diag)
        if m + 1 < len(incs) and roughening > 0:
            chol = np.linalg.cholesky(weighted_covariance(weighted) + 1e-12 * np.eye(particles.states.shape[1]))
            noise = roughening * rng.standard_normal(particles.states.shape) @ chol.T
            particles = replace(particles, states=particles.states + noise)
    return particles, diag


def estimate_state(particles: ParticleSet) -> np.ndarray:
    if particles.degenerate:
        raise FilterError("no estimate from a degenerate particle set")
    w = particles.weights
    return (w @ particles.states) / w.sum()


def update(particles, schedule, config: FilterConfig, seed):
    """Dispatch on ``config.strategy``."""
    if config.strategy == "normal":
        return update_normal(particles, schedule, seed, config.degeneracy_policy)
    if config.strategy == "multiple_update":
        return update_multiple(particles, schedule, seed, config.degeneracy_policy,
                               config.stage_roughening)
    return update_annealed(particles, schedule, config.annealing_exponents, seed,
                           config.degeneracy_policy, config.annealing_roughening)
