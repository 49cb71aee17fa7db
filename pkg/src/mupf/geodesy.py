"""WGS-84 conversions between ECEF, geodetic and local east-north-up frames."""

import numpy as np

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


def geodetic_to_ecef(lat_deg, lon_deg, height):
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * np.sin(lat) ** 2)
    return np.array([
        (n + height) * np.cos(lat) * np.cos(lon),
        (n + height) * np.cos(lat) * np.sin(lon),
        (n * (1.0 - WGS84_E2) + height) * np.sin(lat),
    ])


def ecef_to_geodetic(xyz):
    """Return (lat_deg, lon_deg, height) by fixed-point iteration on latitude."""
    x, y, z = np.asarray(xyz, dtype=float)
    lon = np.arctan2(y, x)
    p = np.hypot(x, y)
    lat = np.arctan2(z, p * (1.0 - WGS84_E2))
    for _ in range(10):
        n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * np.sin(lat) ** 2)
        height = p / np.cos(lat) - n
        lat = np.arctan2(z, p * (1.0 - WGS84_E2 * n / (n + height)))
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * np.sin(lat) ** 2)
    height = p / np.cos(lat) - n
    return np.degrees(lat), np.degrees(lon), height


def enu_basis(origin):
    """Rows are the unit east, north and up vectors at ``origin`` (ECEF)."""
    lat_deg, lon_deg, _ = ecef_to_geodetic(origin)
    lat, lon = np.radians(lat_deg), np.radians(lon_deg)
    sl, cl = np.sin(lat), np.cos(lat)
    so, co = np.sin(lon), np.cos(lon)
    return np.array([
        [-so, co, 0.0],
        [-sl * co, -sl * so, cl],
        [cl * co, cl * so, sl],
    ])


def enu_to_ecef(enu, origin):
    return np.asarray(origin, dtype=float) + np.asarray(enu, dtype=float) @ enu_basis(origin)


def ecef_to_enu(xyz, origin):
    return (np.asarray(xyz, dtype=float) - np.asarray(origin, dtype=float)) @ enu_basis(origin).T
