"""Multiple-update particle filtering for double-differenced GNSS positioning."""

from .filter import (
    DegeneracyError,
    FilterConfig,
    FilterError,
    GaussianPrior,
    MotionModel,
    ParticleSet,
    ScheduleError,
    StageDescriptor,
    UpdateSchedule,
    estimate_state,
    init_particles,
    normalize_weights,
    predict,
    resample_multinomial,
    update,
    update_annealed,
    update_multiple,
    update_normal,
    weight_stage,
)
from .gnss import (
    Band,
    DdGeometry,
    DdObservation,
    ObservationEpoch,
    ObservationError,
    SatelliteEpochState,
    afv,
    build_update_schedule,
    carrier_loglik,
    dd_geometric_range,
    pseudorange_loglik,
    wide_lane_combine,
)
from .harness import (
    BatterySummary,
    ConfigError,
    TrialBatteryConfig,
    TrialResult,
    run_kinematic,
    run_particle_sweep,
    run_static_battery,
)
from .scene import GridMap, Scene, SceneConfig, grid_likelihood_map, oracle_argmax

__version__ = "0.1.0"
