"""
Double-differenced GNSS observation models.

Every likelihood here works in the log domain and accepts either a single
ECEF position of shape ``(3,)`` or a stack of particle states of shape
``(N, 3)``; the result has the matching leading shape. Carrier-phase
likelihoods use the ambiguity function value (AFV), the fractional-cycle
residual between an observed double-difference phase and the geometric
double-difference range, which never requires the integer ambiguity.
"""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SPEED_OF_LIGHT = 299792458.0
FREQ_L1 = 1575.42e6
FREQ_L2 = 1227.60e6
WAVELENGTH_L1 = SPEED_OF_LIGHT / FREQ_L1
WAVELENGTH_L2 = SPEED_OF_LIGHT / FREQ_L2
WAVELENGTH_WL = SPEED_OF_LIGHT / (FREQ_L1 - FREQ_L2)

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class Band(str, Enum):
    PSEUDORANGE = "pseudorange"
    L1 = "carrier_L1"
    L2 = "carrier_L2"
    WL = "carrier_WL"

    @property
    def is_carrier(self) -> bool:
        return self is not Band.PSEUDORANGE


WAVELENGTHS = {Band.L1: WAVELENGTH_L1, Band.L2: WAVELENGTH_L2, Band.WL: WAVELENGTH_WL}

# Broadest to sharpest; the multiple-update filter consumes stages in this order.
STAGE_ORDER = (Band.PSEUDORANGE, Band.WL, Band.L2, Band.L1)


class ObservationError(ValueError):
    """Malformed observation, band mismatch or unresolvable satellite."""


@dataclass(frozen=True)
class SatelliteEpochState:
    sat_id: str
    position: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise ObservationError(f"satellite {self.sat_id!r} needs a finite 3-vector position")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class DdGeometry:
    """Base-rover, pivot-other double-difference structure."""

    pivot_sat: str
    other_sat: str
    base_position: np.ndarray

    def __post_init__(self):
        if self.pivot_sat == self.other_sat:
            raise ObservationError("pivot and other satellite must differ")
        object.__setattr__(self, "base_position", np.asarray(self.base_position, dtype=float))

    @property
    def key(self):
        return (self.pivot_sat, self.other_sat, tuple(self.base_position.tolist()))


@dataclass(frozen=True)
class DdObservation:
    """
    One double-differenced measurement.

    ``value`` and ``sigma`` are in meters for pseudorange and in cycles for
    carrier bands; carrier bands also carry their ``wavelength`` in meters.
    """

    geometry: DdGeometry
    value: float
    band: Band
    sigma: float
    wavelength: float | None = None

    def __post_init__(self):
        band = Band(self.band)
        object.__setattr__(self, "band", band)
        if not self.sigma > 0:
            raise ObservationError(f"sigma must be positive, got {self.sigma}")
        if band.is_carrier:
            if self.wavelength is None or not self.wavelength > 0:
                raise ObservationError(f"{band.value} observation needs a positive wavelength")
        elif self.wavelength is not None:
            raise ObservationError("pseudorange observations carry no wavelength")


@dataclass
class ObservationEpoch:
    time: float
    satellites: list[SatelliteEpochState]
    observations: list[DdObservation] = field(default_factory=list)

    def __post_init__(self):
        ids = [s.sat_id for s in self.satellites]
        if len(set(ids)) != len(ids):
            raise ObservationError(f"duplicate satellite ids at t={self.time}")
        lookup = self.sat_positions
        for obs in self.observations:
            for sid in (obs.geometry.pivot_sat, obs.geometry.other_sat):
                if sid not in lookup:
                    raise ObservationError(f"observation references unknown satellite {sid!r}")

    @property
    def sat_positions(self) -> dict[str, np.ndarray]:
        return {s.sat_id: s.position for s in self.satellites}

    def of_band(self, band) -> list[DdObservation]:
        band = Band(band)
        return [o for o in self.observations if o.band is band]

    def bands(self) -> set[Band]:
        return {o.band for o in self.observations}


def _lookup(sats) -> Mapping[str, np.ndarray]:
    if isinstance(sats, ObservationEpoch):
        return sats.sat_positions
    if isinstance(sats, Mapping):
        return sats
    return {s.sat_id: s.position for s in sats}


def dd_geometric_range(x, geom: DdGeometry, sats) -> np.ndarray:
    """Between-receiver then between-satellite differenced geometric range [m]."""
    lookup = _lookup(sats)
    try:
        pivot = lookup[geom.pivot_sat]
        other = lookup[geom.other_sat]
    except KeyError as exc:
        raise ObservationError(f"satellite {exc.args[0]!r} missing from lookup") from None
    x = np.asarray(x, dtype=float)
    base = geom.base_position
    return _single_difference(other, x, base) - _single_difference(pivot, x, base)


def _single_difference(sat, x, base):
    # |s-x| - |s-b| = (b-x).(2s-x-b) / (|s-x| + |s-b|): no cancellation of two ~2e7 m ranges
    num = np.sum((base - x) * (2.0 * sat - x - base), axis=-1)
    return num / (np.linalg.norm(sat - x, axis=-1) + np.linalg.norm(sat - base))


def _require(obs: DdObservation, carrier: bool):
    if obs.band.is_carrier != carrier:
        want = "a carrier" if carrier else "the pseudorange"
        raise ObservationError(f"expected {want} band, got {obs.band.value}")


def pseudorange_residual(rho: DdObservation, x, sats) -> np.ndarray:
    _require(rho, carrier=False)
    return rho.value - dd_geometric_range(x, rho.geometry, sats)


def gaussian_loglik(residual, sigma):
    residual = np.asarray(residual, dtype=float)
    return -(_LOG_SQRT_2PI + np.log(sigma)) - residual**2 / (2.0 * sigma**2)


def pseudorange_loglik(rho: DdObservation, x, sats) -> np.ndarray:
    return gaussian_loglik(pseudorange_residual(rho, x, sats), rho.sigma)


def epoch_pseudorange_loglik(epoch: ObservationEpoch, x) -> np.ndarray:
    obs = epoch.of_band(Band.PSEUDORANGE)
    if not obs:
        raise ObservationError(f"no pseudorange observations at t={epoch.time}")
    lookup = epoch.sat_positions
    return sum(pseudorange_loglik(o, x, lookup) for o in obs)


def round_half_away(v):
    # floor(|v| + 0.5) misrounds 0.49999999999999994; split off the exact fraction instead
    v = np.asarray(v, dtype=float)
    whole = np.trunc(v)
    return whole + np.where(np.abs(v - whole) >= 0.5, np.sign(v), 0.0)


def afv(phi: DdObservation, x, sats) -> np.ndarray:
    """
    Ambiguity function value in cycles, bounded to [-0.5, 0.5].

    The integer part of the observed phase is stripped before differencing
    (exact in floating point), so shifting the observation by a whole number
    of cycles gives a bit-identical result.
    """
    _require(phi, carrier=True)
    frac = phi.value - np.floor(phi.value)
    v = frac - dd_geometric_range(x, phi.geometry, sats) / phi.wavelength
    return round_half_away(v) - v


def carrier_loglik(phi: DdObservation, x, sats) -> np.ndarray:
    return gaussian_loglik(afv(phi, x, sats), phi.sigma)


def epoch_carrier_loglik(epoch: ObservationEpoch, x, band) -> np.ndarray:
    band = Band(band)
    if not band.is_carrier:
        raise ObservationError(f"{band.value} is not a carrier band")
    obs = epoch.of_band(band)
    if not obs and band is Band.WL:
        obs = with_wide_lane(epoch).of_band(band)
    if not obs:
        raise ObservationError(f"no {band.value} observations at t={epoch.time}")
    lookup = epoch.sat_positions
    return sum(carrier_loglik(o, x, lookup) for o in obs)


def wide_lane_combine(l1: DdObservation, l2: DdObservation) -> DdObservation:
    if Band(l1.band) is not Band.L1 or Band(l2.band) is not Band.L2:
        raise ObservationError("wide-lane needs one carrier_L1 and one carrier_L2 observation")
    if l1.geometry.key != l2.geometry.key:
        raise ObservationError("wide-lane inputs must share their double-difference geometry")
    return DdObservation(
        geometry=l1.geometry,
        value=l1.value - l2.value,
        band=Band.WL,
        sigma=float(np.hypot(l1.sigma, l2.sigma)),
        wavelength=WAVELENGTH_WL,
    )


def with_wide_lane(epoch: ObservationEpoch) -> ObservationEpoch:
    """Return a copy of ``epoch`` with WL observations formed from L1/L2 pairs."""
    have_wl = {o.geometry.key for o in epoch.of_band(Band.WL)}
    l2_by_key = {o.geometry.key: o for o in epoch.of_band(Band.L2)}
    extra = [
        wide_lane_combine(o, l2_by_key[o.geometry.key])
        for o in epoch.of_band(Band.L1)
        if o.geometry.key in l2_by_key and o.geometry.key not in have_wl
    ]
    return ObservationEpoch(epoch.time, list(epoch.satellites), list(epoch.observations) + extra)


def epoch_loglik(epoch: ObservationEpoch, x, band) -> np.ndarray:
    band = Band(band)
    if band is Band.PSEUDORANGE:
        return epoch_pseudorange_loglik(epoch, x)
    return epoch_carrier_loglik(epoch, x, band)


def nominal_spreads(pseudorange_sigma=0.5, carrier_sigma_cycles=0.05) -> dict[Band, float]:
    """
    Per-band likelihood spread in meters of range.

    ``carrier_sigma_cycles`` is either one value for all carrier bands or a
    mapping from band to cycles.
    """
    if isinstance(carrier_sigma_cycles, Mapping):
        cycles = {Band(k): float(v) for k, v in carrier_sigma_cycles.items()}
    else:
        cycles = {b: float(carrier_sigma_cycles) for b in WAVELENGTHS}
    spreads = {Band.PSEUDORANGE: float(pseudorange_sigma)}
    for band, lam in WAVELENGTHS.items():
        if band in cycles:
            spreads[band] = cycles[band] * lam
    return spreads


def build_update_schedule(epoch: ObservationEpoch, pseudorange_sigma=0.5,
                          carrier_sigma_cycles=0.05):
    """
    Order the epoch's bands into likelihood stages, broadest first.

    Stages follow pseudorange, wide-lane, L2, L1, skipping absent bands.
    Wide-lane observations are synthesized from L1/L2 pairs that share a
    geometry.
    """
    from .filter import StageDescriptor, UpdateSchedule

    if not epoch.observations:
        raise ObservationError(f"no observations at t={epoch.time}")
    if not epoch.of_band(Band.PSEUDORANGE):
        raise ObservationError(f"no pseudorange observations at t={epoch.time}")
    epoch = with_wide_lane(epoch)
    spreads = nominal_spreads(pseudorange_sigma, carrier_sigma_cycles)
    present = epoch.bands()
    stages = [
        StageDescriptor(band.value, spreads[band], _BandLoglik(epoch, band))
        for band in STAGE_ORDER
        if band in present
    ]
    return UpdateSchedule(stages)


class _BandLoglik:
    """Picklable per-band evaluator bound to an epoch."""

    def __init__(self, epoch: ObservationEpoch, band: Band):
        self.epoch = epoch
        self.band = band

    def __call__(self, states):
        return epoch_loglik(self.epoch, states, self.band)

    def __repr__(self):
        return f"<loglik {self.band.value} t={self.epoch.time}>"


def combined_loglik(epoch: ObservationEpoch, x, bands: Sequence[Band] | None = None):
    """Sum of all (or the selected) bands' epoch log-likelihoods."""
    epoch = with_wide_lane(epoch)
    bands = [Band(b) for b in bands] if bands is not None else [b for b in STAGE_ORDER if b in epoch.bands()]
    return sum(epoch_loglik(epoch, x, b) for b in bands)


def pseudorange_fix(epoch: ObservationEpoch, x0=None, iterations=10, tol=1e-6) -> np.ndarray:
    """
    Gauss-Newton least-squares position from double-differenced pseudoranges.

    Starts from ``x0`` or, by default, the first observation's base
    position. Needs at least three independent pairs.
    """
    obs = epoch.of_band(Band.PSEUDORANGE)
    if len(obs) < 3:
        raise ObservationError(f"need >= 3 pseudorange pairs for a fix, got {len(obs)}")
    lookup = epoch.sat_positions
    x = np.array(obs[0].geometry.base_position if x0 is None else x0, dtype=float)
    for _ in range(iterations):
        rows, res = [], []
        for o in obs:
            e_other = (lookup[o.geometry.other_sat] - x) / np.linalg.norm(lookup[o.geometry.other_sat] - x)
            e_pivot = (lookup[o.geometry.pivot_sat] - x) / np.linalg.norm(lookup[o.geometry.pivot_sat] - x)
            rows.append((e_pivot - e_other) / o.sigma)
            res.append(float(pseudorange_residual(o, x, lookup)) / o.sigma)
        dx = np.linalg.lstsq(np.array(rows), np.array(res), rcond=None)[0]
        x = x + dx
        if np.linalg.norm(dx) < tol:
            break
    return x
