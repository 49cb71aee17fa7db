"""
Synthetic GNSS scenes and dense-grid likelihood maps.

A scene is a fixed geometry-only constellation seen from a base station,
per-scene integer double-difference ambiguities, and noisy double-difference
pseudorange/L1/L2 observations of a rover. The grid evaluator computes a
log-likelihood surface on a plane through a position; it is the brute-force
oracle the filter tests compare against.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import geodesy
from .gnss import (
    WAVELENGTH_L1,
    WAVELENGTH_L2,
    Band,
    DdGeometry,
    DdObservation,
    ObservationEpoch,
    SatelliteEpochState,
    combined_loglik,
    dd_geometric_range,
    epoch_loglik,
    with_wide_lane,
)

# Tokyo, roughly where the kinematic data in this domain comes from.
DEFAULT_BASE = tuple(geodesy.geodetic_to_ecef(35.666, 139.792, 40.0).tolist())

_PLANE_AXES = {"en": (0, 1), "eu": (0, 2), "nu": (1, 2)}
_AXIS_NAMES = ("east_m", "north_m", "up_m")


class SceneError(ValueError):
    pass


@dataclass
class SceneConfig:
    n_satellites: int = 8
    elevation_range: tuple[float, float] = (15.0, 75.0)
    layout: str = "ring"
    azimuth_offset_deg: float = 0.0
    orbit_radius: float = 26_560_000.0
    base_position: tuple[float, float, float] = DEFAULT_BASE
    rover_offset_enu: tuple[float, float, float] = (300.0, 400.0, 5.0)
    pseudorange_sigma: float = 0.5
    carrier_sigma_cycles: float = 0.05
    seed: int = 0
    true_trajectory: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_satellites < 2:
            raise SceneError("double differencing needs at least two satellites")
        if self.pseudorange_sigma < 0 or self.carrier_sigma_cycles < 0:
            raise SceneError("noise sigmas must be nonnegative")
        lo, hi = self.elevation_range
        if not 0.0 <= lo <= hi <= 90.0:
            raise SceneError(f"bad elevation range {self.elevation_range}")
        if self.layout not in ("ring", "random"):
            raise SceneError(f"unknown layout {self.layout!r}")

    @property
    def base(self) -> np.ndarray:
        return np.asarray(self.base_position, dtype=float)

    @property
    def rover(self) -> np.ndarray:
        """Static rover truth: the base shifted by ``rover_offset_enu``."""
        return geodesy.enu_to_ecef(self.rover_offset_enu, self.base)


def _azimuth_elevation(cfg: SceneConfig):
    n = cfg.n_satellites
    lo, hi = cfg.elevation_range
    if cfg.layout == "ring":
        az = cfg.azimuth_offset_deg + 360.0 * np.arange(n) / n
        # interleave so high and low satellites alternate around the ring
        order = np.argsort(np.arange(n) % 2, kind="stable")
        el = np.empty(n)
        el[order] = np.linspace(lo, hi, n)
    else:
        rng = np.random.default_rng([cfg.seed, 0x5A7])
        az = cfg.azimuth_offset_deg + rng.uniform(0.0, 360.0, n)
        el = rng.uniform(lo, hi, n)
    return np.mod(az, 360.0), el


def generate_constellation(cfg: SceneConfig) -> list[SatelliteEpochState]:
    """Place satellites on a sphere of ``orbit_radius`` along base lines of sight."""
    az, el = _azimuth_elevation(cfg)
    base = cfg.base
    basis = geodesy.enu_basis(base)
    azr, elr = np.radians(az), np.radians(el)
    los_enu = np.column_stack([np.cos(elr) * np.sin(azr), np.cos(elr) * np.cos(azr), np.sin(elr)])
    los = los_enu @ basis
    sats = []
    for i, u in enumerate(los):
        # |base + s u| = orbit_radius, take the positive root
        bu = base @ u
        s = -bu + np.sqrt(bu * bu - base @ base + cfg.orbit_radius**2)
        sats.append(SatelliteEpochState(f"G{i + 1:02d}", base + s * u))
    return sats


def elevations(cfg: SceneConfig, sats, origin=None) -> dict[str, float]:
    origin = cfg.base if origin is None else np.asarray(origin, dtype=float)
    up = geodesy.enu_basis(origin)[2]
    out = {}
    for s in sats:
        d = s.position - origin
        out[s.sat_id] = float(np.degrees(np.arcsin(up @ d / np.linalg.norm(d))))
    return out


class Scene:
    """
    Constellation plus fixed integer ambiguities for one scene.

    Ambiguities are drawn once from ``cfg.seed`` and reused by every epoch.
    """

    def __init__(self, cfg: SceneConfig):
        self.cfg = cfg
        self.satellites = generate_constellation(cfg)
        elev = elevations(cfg, self.satellites)
        visible = [s for s in self.satellites if elev[s.sat_id] > 0.0]
        if len(visible) < 2:
            raise SceneError("fewer than 2 visible satellites")
        self.satellites = visible
        self.pivot = max(visible, key=lambda s: elev[s.sat_id]).sat_id
        self.geometries = [
            DdGeometry(self.pivot, s.sat_id, cfg.base) for s in visible if s.sat_id != self.pivot
        ]
        rng = np.random.default_rng([cfg.seed, 0xA3B])
        k = len(self.geometries)
        self.ambiguities = {
            Band.L1: rng.integers(-10_000, 10_000, k),
            Band.L2: rng.integers(-10_000, 10_000, k),
        }

    def synthesize_epoch(self, time, truth, seed) -> ObservationEpoch:
        cfg = self.cfg
        rng = np.random.default_rng(seed)
        lookup = {s.sat_id: s.position for s in self.satellites}
        truth = np.asarray(truth, dtype=float)
        k = len(self.geometries)
        r = np.array([float(dd_geometric_range(truth, g, lookup)) for g in self.geometries])
        # one draw per array regardless of sigma so streams stay aligned
        n_rho = rng.standard_normal(k)
        n_l1 = rng.standard_normal(k)
        n_l2 = rng.standard_normal(k)
        s_rho = cfg.pseudorange_sigma
        s_phi = cfg.carrier_sigma_cycles
        obs = []
        for i, g in enumerate(self.geometries):
            obs.append(DdObservation(g, r[i] + s_rho * n_rho[i], Band.PSEUDORANGE, _declared(s_rho, 0.5)))
        for band, lam, noise in ((Band.L1, WAVELENGTH_L1, n_l1), (Band.L2, WAVELENGTH_L2, n_l2)):
            amb = self.ambiguities[band]
            for i, g in enumerate(self.geometries):
                value = r[i] / lam + amb[i] + s_phi * noise[i]
                obs.append(DdObservation(g, value, band, _declared(s_phi, 0.05), lam))
        return ObservationEpoch(float(time), list(self.satellites), obs)


def _declared(sigma, default):
    # noise-free scenes still need a finite likelihood width
    return sigma if sigma > 0 else default


def synthesize_epoch(cfg: SceneConfig, time, truth, seed) -> ObservationEpoch:
    return Scene(cfg).synthesize_epoch(time, truth, seed)


@dataclass
class GridMap:
    """Log-likelihood over a square planar grid through ``center``."""

    center: np.ndarray
    half_extent: float
    resolution: float
    values: np.ndarray
    plane: str = "en"
    selector: str = "combined"

    @property
    def offsets(self) -> np.ndarray:
        n = self.values.shape[0]
        return (np.arange(n) - n // 2) * self.resolution

    def node_position(self, i, j) -> np.ndarray:
        """ECEF position of grid node (row ``i`` along the second axis, column ``j``)."""
        a, b = _PLANE_AXES[self.plane]
        enu = np.zeros(3)
        enu[a] = self.offsets[j]
        enu[b] = self.offsets[i]
        return geodesy.enu_to_ecef(enu, self.center)

    def to_csv(self, path):
        a, b = _PLANE_AXES[self.plane]
        off = self.offsets
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([_AXIS_NAMES[a], _AXIS_NAMES[b], "loglik"])
            for i in range(self.values.shape[0]):
                for j in range(self.values.shape[1]):
                    w.writerow([f"{off[j]:.4f}", f"{off[i]:.4f}", repr(float(self.values[i, j]))])


def grid_nodes(center, half_extent=1.0, resolution=0.01, plane="en"):
    """ECEF positions of every node, shape (n, n, 3), rows along the plane's second axis."""
    if plane not in _PLANE_AXES:
        raise SceneError(f"unknown plane {plane!r}; pick one of {sorted(_PLANE_AXES)}")
    if not resolution > 0 or not half_extent >= 0:
        raise SceneError("grid needs positive resolution and nonnegative extent")
    half = int(round(half_extent / resolution))
    off = (np.arange(2 * half + 1) - half) * resolution
    a, b = _PLANE_AXES[plane]
    enu = np.zeros((off.size, off.size, 3))
    enu[:, :, a] = off[None, :]
    enu[:, :, b] = off[:, None]
    return geodesy.enu_to_ecef(enu, center)


SELECTORS = ("pseudorange", "wl", "l2", "l1", "combined")
_SELECTOR_BANDS = {"pseudorange": Band.PSEUDORANGE, "wl": Band.WL, "l2": Band.L2, "l1": Band.L1}


def grid_likelihood_map(epoch: ObservationEpoch, truth, selector="combined",
                        half_extent=1.0, resolution=0.01, plane="en") -> GridMap:
    """
    Evaluate the selected log-likelihood at every node of a grid through ``truth``.

    ``selector`` is a band name, ``"combined"`` for the sum over all bands, or
    a :class:`~mupf.gnss.DdObservation` for a single satellite pair.
    """
    truth = np.asarray(truth, dtype=float)
    nodes = grid_nodes(truth, half_extent, resolution, plane)
    flat = nodes.reshape(-1, 3)
    epoch = with_wide_lane(epoch)
    if isinstance(selector, DdObservation):
        from .gnss import carrier_loglik, pseudorange_loglik

        fn = carrier_loglik if selector.band.is_carrier else pseudorange_loglik
        values = fn(selector, flat, epoch.sat_positions)
        name = f"{selector.band.value}:{selector.geometry.pivot_sat}-{selector.geometry.other_sat}"
    elif selector == "combined":
        values = combined_loglik(epoch, flat)
        name = selector
    elif selector in _SELECTOR_BANDS:
        values = epoch_loglik(epoch, flat, _SELECTOR_BANDS[selector])
        name = selector
    else:
        raise SceneError(f"unknown selector {selector!r}; pick one of {SELECTORS}")
    return GridMap(truth, half_extent, resolution, values.reshape(nodes.shape[:2]), plane, name)


def oracle_argmax(gmap: GridMap) -> np.ndarray:
    """Grid node of maximum value; ties go to the node nearest the center, then lowest index."""
    v = gmap.values
    n = v.shape[0]
    ii, jj = np.nonzero(v == v.max())
    c = n // 2
    d2 = (ii - c) ** 2 + (jj - c) ** 2
    flat = ii * n + jj
    k = np.lexsort((flat, d2))[0]
    return gmap.node_position(ii[k], jj[k])


def count_local_maxima(gmap: GridMap) -> int:
    """Interior nodes strictly greater than all eight neighbours."""
    v = gmap.values
    core = v[1:-1, 1:-1]
    is_max = np.ones_like(core, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            is_max &= core > v[1 + di:v.shape[0] - 1 + di, 1 + dj:v.shape[1] - 1 + dj]
    return int(is_max.sum())


def count_peaks(gmap: GridMap, depth=5.0) -> int:
    """
    Number of distinct peaks competing with the global maximum.

    Counts 8-connected regions of nodes within ``depth`` (log-likelihood
    units) of the map maximum. A single-pair carrier map has whole ridges at
    the maximum height, which node-level counting fragments into however
    many nodes the grid happens to sample along the crest; this count gives
    each ridge exactly one peak.
    """
    if not depth >= 0:
        raise SceneError("depth must be nonnegative")
    v = gmap.values
    _, n = ndimage.label(v >= v.max() - depth, structure=np.ones((3, 3), dtype=bool))
    return int(n)
