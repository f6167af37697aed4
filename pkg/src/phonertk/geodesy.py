"""WGS-84 coordinate conversions and look angles.

ECEF positions and ENU vectors are plain ``numpy`` arrays of shape (3,);
geodetic positions use :class:`Geodetic` with angles in degrees.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


class GeodesyError(ValueError):
    pass


class _GeodeticFields(NamedTuple):
    lat: float  # deg
    lon: float  # deg
    h: float  # m above ellipsoid


class Geodetic(_GeodeticFields):
    """Latitude in [-90, 90], longitude in (-180, 180], finite height."""
    __slots__ = ()

    def __new__(cls, lat: float, lon: float, h: float = 0.0):
        lat, lon, h = float(lat), float(lon), float(h)
        if not -90.0 <= lat <= 90.0:
            raise GeodesyError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 < lon <= 180.0:
            raise GeodesyError(f"longitude {lon} outside (-180, 180]")
        if not math.isfinite(h):
            raise GeodesyError("height must be finite")
        return super().__new__(cls, lat, lon, h)


class ElevationAzimuth(NamedTuple):
    elevation: float  # deg
    azimuth: float  # deg, clockwise from north


def geodetic_to_ecef(p: Geodetic) -> np.ndarray:
    lat = math.radians(p.lat)
    lon = math.radians(p.lon)
    slat, clat = math.sin(lat), math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
    return np.array([
        (n + p.h) * clat * math.cos(lon),
        (n + p.h) * clat * math.sin(lon),
        (n * (1.0 - WGS84_E2) + p.h) * slat,
    ])


def ecef_to_geodetic(r, tol: float = 1e-14, max_iter: int = 30) -> Geodetic:
    """Iterative inverse of :func:`geodetic_to_ecef`.

    The latitude iteration starts from Bowring's parametric guess and stops
    once the correction drops below ``tol`` radians.
    """
    x, y, z = (float(v) for v in r)
    if math.sqrt(x * x + y * y + z * z) <= 1.0:
        raise GeodesyError("position too close to the geocenter")
    p = math.hypot(x, y)
    lon = math.atan2(y, x)
    if p < 1e-9:
        lat = math.copysign(math.pi / 2, z)
        return Geodetic(math.degrees(lat), 0.0, abs(z) - WGS84_B)

    lat = math.atan2(z, p * (1.0 - WGS84_E2))
    for _ in range(max_iter):
        slat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
        new = math.atan2(z + WGS84_E2 * n * slat, p)
        if abs(new - lat) < tol:
            lat = new
            break
        lat = new
    else:
        raise GeodesyError("latitude iteration did not converge")

    slat, clat = math.sin(lat), math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * slat * slat)
    # the cos form loses precision near the poles
    if abs(clat) > 1e-3:
        h = p / clat - n
    else:
        h = z / slat - n * (1.0 - WGS84_E2)
    lon_deg = math.degrees(lon)
    if lon_deg <= -180.0:
        lon_deg += 360.0
    return Geodetic(math.degrees(lat), lon_deg, h)


def enu_rotation(origin: Geodetic) -> np.ndarray:
    """Rows are the east, north and up unit vectors at ``origin`` (in ECEF)."""
    lat = math.radians(origin.lat)
    lon = math.radians(origin.lon)
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return np.array([
        [-so, co, 0.0],
        [-sl * co, -sl * so, cl],
        [cl * co, cl * so, sl],
    ])


def ecef_to_enu(point, origin: Geodetic) -> np.ndarray:
    d = np.asarray(point, dtype=float) - geodetic_to_ecef(origin)
    return enu_rotation(origin) @ d


def enu_to_ecef(enu, origin: Geodetic) -> np.ndarray:
    return geodetic_to_ecef(origin) + enu_rotation(origin).T @ np.asarray(enu, dtype=float)


def elevation_azimuth(receiver, satellite) -> ElevationAzimuth:
    """Look angles of ``satellite`` from ``receiver`` (both ECEF).

    Azimuth is reported as 0 at the zenith, where it is undefined.
    """
    receiver = np.asarray(receiver, dtype=float)
    los = np.asarray(satellite, dtype=float) - receiver
    dist = float(np.linalg.norm(los))
    if dist <= 1.0:
        raise GeodesyError("satellite and receiver coincide")
    e, n, u = enu_rotation(ecef_to_geodetic(receiver)) @ (los / dist)
    el = math.degrees(math.asin(max(-1.0, min(1.0, u))))
    if math.hypot(e, n) < 1e-12:
        return ElevationAzimuth(el, 0.0)
    az = math.degrees(math.atan2(e, n)) % 360.0
    if az >= 360.0:
        az = 0.0
    return ElevationAzimuth(el, az)
